//! Reciprocal Rank Fusion over ranked lists from heterogeneous retrievers.

use std::collections::HashMap;

use crate::corpus::ChunkIndex;
use crate::retrieval::RankedList;

/// Default smoothing constant from the standard RRF formulation.
pub const DEFAULT_RRF_K: usize = 60;

/// Fuse ranked lists: each document scores `sum over lists of
/// 1/(k_rrf + rank)` with 1-based ranks. The result contains every document
/// appearing in any input, sorted by fused score (ties by ascending chunk
/// index).
///
/// Per-document reciprocal terms are sorted before summation so the result
/// is bit-identical under any permutation of the input lists.
pub fn rrf_fuse(lists: &[RankedList], k_rrf: usize) -> RankedList {
    let mut terms: HashMap<ChunkIndex, Vec<f64>> = HashMap::new();
    for list in lists {
        for (rank, (chunk, _)) in list.entries().iter().enumerate() {
            terms
                .entry(*chunk)
                .or_default()
                .push(1.0 / (k_rrf + rank + 1) as f64);
        }
    }
    let mut entries: Vec<(ChunkIndex, f64)> = terms
        .into_iter()
        .map(|(chunk, mut parts)| {
            parts.sort_unstable_by(|a, b| b.partial_cmp(a).expect("finite"));
            (chunk, parts.iter().sum::<f64>())
        })
        .collect();
    entries.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("RRF scores are finite")
            .then(a.0.cmp(&b.0))
    });
    let depth = entries.len();
    RankedList::new(entries, depth)
}

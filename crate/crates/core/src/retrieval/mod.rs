//! Retrievers: lexical BM25, semantic k-NN, and an RRF hybrid of the two,
//! all behind the [`Retriever`] trait.
//!
//! Every search returns a [`RankedList`]: sorted by score descending,
//! deduplicated, ties broken by ascending chunk index, length capped at
//! the requested depth.

pub mod fusion;
pub mod lexical;
pub mod tokenize;
pub mod vector;

use serde::{Deserialize, Serialize};

use crate::corpus::ChunkIndex;
use crate::error::Result;

pub use fusion::{rrf_fuse, DEFAULT_RRF_K};
pub use lexical::{bm25_score, search_lexical, Bm25Params, LexicalIndex};
pub use tokenize::{is_cjk, tokenize, TokenizeMode};
pub use vector::{
    search_semantic, toy_embed, EmbeddingProvider, HttpEmbeddingProvider, ToyEmbedder, VectorIndex,
};

/// Ordered retrieval results with scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    entries: Vec<(ChunkIndex, f64)>,
    k: usize,
}

impl RankedList {
    /// `entries` must already be sorted by descending score with ascending
    /// chunk-index tie-break and contain no duplicate chunk indices.
    pub fn new(entries: Vec<(ChunkIndex, f64)>, k: usize) -> Self {
        debug_assert!(entries.len() <= k.max(entries.len()));
        debug_assert!(entries.windows(2).all(|w| {
            w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)
        }));
        Self { entries, k }
    }

    pub fn entries(&self) -> &[(ChunkIndex, f64)] {
        &self.entries
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based rank of a chunk, if present.
    pub fn rank_of(&self, chunk: ChunkIndex) -> Option<usize> {
        self.entries
            .iter()
            .position(|(c, _)| *c == chunk)
            .map(|i| i + 1)
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self.k = k;
        self
    }
}

/// A retriever maps a query string to a ranked list of chunks.
pub trait Retriever {
    fn name(&self) -> &str;
    fn search(&self, query: &str, k: usize) -> Result<RankedList>;
}

/// BM25 retriever over a [`LexicalIndex`].
pub struct LexicalRetriever<'a> {
    pub index: &'a LexicalIndex,
}

impl Retriever for LexicalRetriever<'_> {
    fn name(&self) -> &str {
        "lexical"
    }

    fn search(&self, query: &str, k: usize) -> Result<RankedList> {
        Ok(search_lexical(self.index, query, k))
    }
}

/// Exact k-NN retriever over a [`VectorIndex`].
pub struct SemanticRetriever<'a> {
    pub index: &'a VectorIndex,
    pub provider: &'a dyn EmbeddingProvider,
}

impl Retriever for SemanticRetriever<'_> {
    fn name(&self) -> &str {
        "semantic"
    }

    fn search(&self, query: &str, k: usize) -> Result<RankedList> {
        search_semantic(self.index, self.provider, query, k)
    }
}

/// Candidate depths for the hybrid retriever: each side retrieves
/// `max(depth_factor*k, depth_min)` before fusion truncates to `k`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HybridConfig {
    pub rrf_k: usize,
    pub depth_factor: usize,
    pub depth_min: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            rrf_k: DEFAULT_RRF_K,
            depth_factor: 3,
            depth_min: 30,
        }
    }
}

/// Lexical and semantic retrieval run in parallel conceptually; their ranked
/// lists are fused with RRF.
pub struct HybridRetriever<'a> {
    pub lexical: &'a LexicalIndex,
    pub vector: &'a VectorIndex,
    pub provider: &'a dyn EmbeddingProvider,
    pub config: HybridConfig,
}

impl Retriever for HybridRetriever<'_> {
    fn name(&self) -> &str {
        "hybrid"
    }

    fn search(&self, query: &str, k: usize) -> Result<RankedList> {
        let depth = (self.config.depth_factor * k).max(self.config.depth_min);
        let lex = search_lexical(self.lexical, query, depth);
        let sem = search_semantic(self.vector, self.provider, query, depth)?;
        Ok(rrf_fuse(&[lex, sem], self.config.rrf_k).truncated(k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_db, ChunkConfig, Document};

    fn store(texts: &[&str]) -> crate::corpus::ChunkStore {
        let docs: Vec<Document> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t))
            .collect();
        build_db(&docs, &ChunkConfig::new(10_000, 0).unwrap()).unwrap()
    }

    #[test]
    fn hybrid_fuses_both_sides_and_truncates() {
        let store = store(&["alpha beta", "gamma delta", "alpha gamma", "zeta"]);
        let lexical = LexicalIndex::build(&store, Bm25Params::default(), TokenizeMode::Word);
        let provider = ToyEmbedder::new(32, 4).unwrap();
        let vector = VectorIndex::build(&store, &provider).unwrap();
        let hybrid = HybridRetriever {
            lexical: &lexical,
            vector: &vector,
            provider: &provider,
            config: HybridConfig::default(),
        };
        let ranked = hybrid.search("alpha beta", 2).unwrap();
        assert!(ranked.entries().len() <= 2);
        assert_eq!(ranked.entries()[0].0, 0);
    }

    #[test]
    fn rank_of_is_one_based() {
        let list = RankedList::new(vec![(10, 2.0), (4, 1.0)], 5);
        assert_eq!(list.rank_of(10), Some(1));
        assert_eq!(list.rank_of(4), Some(2));
        assert_eq!(list.rank_of(99), None);
    }
}

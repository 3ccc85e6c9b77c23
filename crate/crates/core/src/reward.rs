//! Composite reward for a generated rewrite: an NDCG retrieval term plus a
//! format/redundancy penalty that is normalized within each rollout group.
//!
//! A generation only earns retrieval reward through the text inside its
//! first `<answer>...</answer>` block; characters outside the block are the
//! raw penalty, and a generation without the block gets an infinite penalty
//! and no retrieval reward at all.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{ChunkIndex, ChunkStore};
use crate::error::{Error, Result};
use crate::retrieval::{RankedList, Retriever};

/// Raw format penalty: character count outside the answer block, or
/// infinite when the block is missing. Serializes as a number or `null`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    Finite(u64),
    Infinite,
}

impl Penalty {
    pub fn is_zero(self) -> bool {
        self == Penalty::Finite(0)
    }

    pub fn finite(self) -> Option<u64> {
        match self {
            Penalty::Finite(v) => Some(v),
            Penalty::Infinite => None,
        }
    }
}

impl Serialize for Penalty {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Penalty::Finite(v) => serializer.serialize_u64(*v),
            Penalty::Infinite => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Penalty {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let opt: Option<u64> = Option::deserialize(deserializer)?;
        Ok(opt.map_or(Penalty::Infinite, Penalty::Finite))
    }
}

/// Whether a ranked chunk counts as relevant when it equals the target chunk
/// or merely shares the target's parent document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceLevel {
    #[default]
    Chunk,
    Document,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the retrieval term.
    pub lambda_retrieval: f64,
    /// Weight of the normalized penalty; negative so redundancy subtracts.
    pub lambda_penalty: f64,
    pub ndcg_k: usize,
    pub relevance_level: RelevanceLevel,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_retrieval: 1.0,
            lambda_penalty: -0.2,
            ndcg_k: 3,
            relevance_level: RelevanceLevel::Chunk,
        }
    }
}

/// Per-generation reward components. `total` is always
/// `lambda_retrieval * retrieval + lambda_penalty * normalized_penalty`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub retrieval: f64,
    pub raw_penalty: Penalty,
    pub normalized_penalty: f64,
    pub total: f64,
    #[serde(skip)]
    pub formatted_query: Option<String>,
}

/// Binary-relevance NDCG with a single relevant item: `1/log2(rank+1)` if
/// the first relevant entry sits at `rank <= k`, else 0. The ideal DCG is 1.
pub fn ndcg_at_k(
    ranked: &RankedList,
    mut is_relevant: impl FnMut(ChunkIndex) -> bool,
    k: usize,
) -> f64 {
    for (i, (chunk, _)) in ranked.entries().iter().take(k).enumerate() {
        if is_relevant(*chunk) {
            let rank = i + 1;
            return 1.0 / ((rank + 1) as f64).log2();
        }
    }
    0.0
}

/// NDCG against a target chunk, resolving document-level relevance through
/// the store when configured.
pub fn ndcg_for_target(
    ranked: &RankedList,
    target: ChunkIndex,
    level: RelevanceLevel,
    store: &ChunkStore,
    k: usize,
) -> Result<f64> {
    match level {
        RelevanceLevel::Chunk => Ok(ndcg_at_k(ranked, |c| c == target, k)),
        RelevanceLevel::Document => {
            let target_doc = store.parent_doc(target)?.to_string();
            let mut err = None;
            let score = ndcg_at_k(
                ranked,
                |c| match store.parent_doc(c) {
                    Ok(doc) => doc == target_doc,
                    Err(e) => {
                        err.get_or_insert(e);
                        false
                    }
                },
                k,
            );
            match err {
                Some(e) => Err(e),
                None => Ok(score),
            }
        }
    }
}

/// Locate the first `<answer>...</answer>` block. Returns the inner text and
/// the raw penalty: the number of characters outside the block, or
/// [`Penalty::Infinite`] when no block exists.
pub fn format_penalty(y: &str) -> (Option<String>, Penalty) {
    const OPEN: &str = "<answer>";
    const CLOSE: &str = "</answer>";
    let Some(start) = y.find(OPEN) else {
        return (None, Penalty::Infinite);
    };
    let inner_start = start + OPEN.len();
    let Some(close_rel) = y[inner_start..].find(CLOSE) else {
        return (None, Penalty::Infinite);
    };
    let inner = &y[inner_start..inner_start + close_rel];
    let span_chars = OPEN.chars().count() + inner.chars().count() + CLOSE.chars().count();
    let total_chars = y.chars().count();
    (
        Some(inner.to_string()),
        Penalty::Finite((total_chars - span_chars) as u64),
    )
}

struct PenaltyStats {
    has_infinite: bool,
    min_finite: Option<u64>,
    max_finite: Option<u64>,
}

impl PenaltyStats {
    fn of(group: &[Penalty]) -> Self {
        let mut stats = Self {
            has_infinite: false,
            min_finite: None,
            max_finite: None,
        };
        for p in group {
            match p {
                Penalty::Infinite => stats.has_infinite = true,
                Penalty::Finite(0) => {}
                Penalty::Finite(v) => {
                    stats.min_finite = Some(stats.min_finite.map_or(*v, |m| m.min(*v)));
                    stats.max_finite = Some(stats.max_finite.map_or(*v, |m| m.max(*v)));
                }
            }
        }
        stats
    }

    fn normalize(&self, p: Penalty) -> f64 {
        match p {
            Penalty::Finite(0) => 0.0,
            Penalty::Infinite => 1.0,
            Penalty::Finite(v) => {
                let (min, max) = (
                    self.min_finite.expect("finite value implies min"),
                    self.max_finite.expect("finite value implies max"),
                );
                if min == max {
                    // A single distinct finite value spans the bottom of the
                    // range when an infinite member occupies the top.
                    if self.has_infinite {
                        0.5
                    } else {
                        1.0
                    }
                } else {
                    0.5 + 0.5 * (v - min) as f64 / (max - min) as f64
                }
            }
        }
    }
}

/// Group-wise penalty normalization: zeros stay 0, infinite values map to
/// 1.0, and finite non-zero values map affinely onto `[0.5, 1]` with the
/// group minimum at 0.5 and the group maximum at 1.0.
pub fn normalize_group_penalties(group: &[Penalty]) -> Vec<f64> {
    let stats = PenaltyStats::of(group);
    group.iter().map(|p| stats.normalize(*p)).collect()
}

/// Reward computation bound to a chunk store and config.
pub struct RewardEvaluator<'a> {
    store: &'a ChunkStore,
    cfg: RewardConfig,
}

impl<'a> RewardEvaluator<'a> {
    pub fn new(store: &'a ChunkStore, cfg: RewardConfig) -> Self {
        Self { store, cfg }
    }

    pub fn config(&self) -> &RewardConfig {
        &self.cfg
    }

    pub fn store_len(&self) -> usize {
        self.store.len()
    }

    pub fn ndcg(&self, ranked: &RankedList, target: ChunkIndex) -> Result<f64> {
        ndcg_for_target(ranked, target, self.cfg.relevance_level, self.store, self.cfg.ndcg_k)
    }

    fn breakdown(
        &self,
        target: ChunkIndex,
        y: &str,
        retriever: &dyn Retriever,
        stats: &PenaltyStats,
    ) -> Result<RewardBreakdown> {
        if target as usize >= self.store.len() {
            return Err(Error::TargetOutOfRange {
                target,
                len: self.store.len(),
            });
        }
        let (formatted_query, raw_penalty) = format_penalty(y);
        let retrieval = match &formatted_query {
            Some(query) => {
                let ranked = retriever.search(query, self.cfg.ndcg_k)?;
                self.ndcg(&ranked, target)?
            }
            // No answer block means there is no query to search.
            None => 0.0,
        };
        let normalized_penalty = stats.normalize(raw_penalty);
        let total = self.cfg.lambda_retrieval * retrieval
            + self.cfg.lambda_penalty * normalized_penalty;
        Ok(RewardBreakdown {
            retrieval,
            raw_penalty,
            normalized_penalty,
            total,
            formatted_query,
        })
    }

    /// Reward one generation against the raw penalties of its whole group
    /// (which must include this generation's own raw penalty, since
    /// normalization is group-relative).
    pub fn combined_reward(
        &self,
        sample: &crate::synth::QuerySample,
        y: &str,
        retriever: &dyn Retriever,
        group_penalties: &[Penalty],
    ) -> Result<RewardBreakdown> {
        let stats = PenaltyStats::of(group_penalties);
        self.breakdown(sample.target_index, y, retriever, &stats)
    }

    /// Reward all generations of one rollout group.
    pub fn evaluate_group(
        &self,
        sample: &crate::synth::QuerySample,
        outputs: &[String],
        retriever: &dyn Retriever,
    ) -> Result<Vec<RewardBreakdown>> {
        let raw: Vec<Penalty> = outputs.iter().map(|y| format_penalty(y).1).collect();
        let stats = PenaltyStats::of(&raw);
        outputs
            .iter()
            .map(|y| self.breakdown(sample.target_index, y, retriever, &stats))
            .collect()
    }
}

//! Desk-scale pipeline for training retriever-specific query rewriters.
//!
//! The stages, end to end:
//!
//! 1. [`corpus`] — chunk raw documents into an immutable retrieval database.
//! 2. [`synth`] — generate long scenario-style queries per chunk through a
//!    completion provider and filter them into a training set.
//! 3. [`retrieval`] — BM25, dense k-NN, and RRF-hybrid retrievers over the
//!    chunk store.
//! 4. [`reward`] — NDCG retrieval reward plus a group-normalized format
//!    penalty for generated rewrites.
//! 5. [`policy`] — a trainable per-term rewrite policy (drop / keep /
//!    repeat) with exact softmax gradients, plus the adapter contract for
//!    external token-level policies.
//! 6. [`grpo`] — group-relative policy optimization with a clipped
//!    importance-ratio surrogate.
//! 7. [`eval`] — NDCG and query-length reporting for any
//!    rewriter/retriever pairing.
//! 8. [`demo`] — a fully seeded synthetic scenario proving the loop learns.
//!
//! Everything stochastic is driven by explicit seeds; two runs with the
//! same inputs and seed produce byte-identical artifacts.

pub mod corpus;
pub mod demo;
pub mod error;
pub mod eval;
pub mod grpo;
pub mod io;
pub mod policy;
pub mod retrieval;
pub mod reward;
pub mod synth;

pub use corpus::{build_db, chunk_document, Chunk, ChunkConfig, ChunkIndex, ChunkStore, Document};
pub use error::{Error, Result};
pub use eval::{cross_matrix, evaluate, EvalReport};
pub use grpo::{
    compute_advantages, grpo_loss, train_loop, train_step, GrpoConfig, RolloutGroup, TrainLog,
    TrainRecord,
};
pub use policy::{
    apply_actions, greedy_rewrite, sample_rewrite, PolicyParams, RewriteAction, Rewriter, Rollout,
    TermFeaturizer,
};
pub use retrieval::{
    bm25_score, rrf_fuse, search_lexical, search_semantic, toy_embed, Bm25Params, EmbeddingProvider,
    HybridConfig, HybridRetriever, LexicalIndex, LexicalRetriever, RankedList, Retriever,
    SemanticRetriever, TokenizeMode, ToyEmbedder, VectorIndex,
};
pub use reward::{
    format_penalty, ndcg_at_k, normalize_group_penalties, Penalty, RelevanceLevel, RewardBreakdown,
    RewardConfig, RewardEvaluator,
};
pub use synth::{
    build_training_set, parse_synthesis_output, render_synthesis_prompt, FilterConfig,
    QuerySample, SynthReport, SynthesisTriple,
};

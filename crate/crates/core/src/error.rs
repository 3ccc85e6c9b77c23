//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::synth::provider::ProviderError;

/// Errors produced by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate doc_id `{0}` in corpus input")]
    DuplicateDocId(String),

    #[error("unknown chunk index {index} (store holds {len} chunks)")]
    UnknownChunk { index: u64, len: usize },

    #[error("chunk store is empty")]
    EmptyStore,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("sample for chunk {target} targets an index outside the store ({len} chunks)")]
    TargetOutOfRange { target: u64, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("embedding fingerprint mismatch: index built with `{index}` but provider is `{provider}`")]
    FingerprintMismatch { index: String, provider: String },

    #[error("corpus fingerprint mismatch: index built for `{index}` but store is `{store}`")]
    CorpusMismatch { index: String, store: String },

    #[error("embedding dimension mismatch: index has {index}, provider has {provider}")]
    DimensionMismatch { index: usize, provider: usize },

    #[error("action count {actions} does not match term count {terms}")]
    ActionLengthMismatch { actions: usize, terms: usize },

    #[error("group size must be at least 2, got {0}")]
    GroupTooSmall(usize),

    #[error("non-finite log-probability in rollout {rollout} at step {step}")]
    NonFiniteLogProb { rollout: usize, step: usize },

    #[error("synthesis failed for all {0} chunks (provider errors)")]
    SynthesisExhausted(usize),

    #[error("provider error for chunk {chunk}: {source}")]
    Provider {
        chunk: u64,
        #[source]
        source: ProviderError,
    },

    #[error("unsupported {what} version {found} (expected {expected})")]
    UnsupportedVersion {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

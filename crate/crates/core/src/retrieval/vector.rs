//! Semantic retrieval: exact k-NN over unit-norm embeddings.
//!
//! The embedding source is abstracted behind [`EmbeddingProvider`]; the
//! built-in [`ToyEmbedder`] is a seeded feature-hashing embedder that makes
//! offline tests fully deterministic, and [`HttpEmbeddingProvider`] talks to
//! a real embedding endpoint (text in, float array out).

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkIndex, ChunkStore};
use crate::error::{Error, Result};
use crate::io;
use crate::retrieval::tokenize::{tokenize, TokenizeMode};
use crate::retrieval::RankedList;

/// Deterministic text-to-vector mapping with a stable fingerprint.
pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;
    /// Identity of the embedding space; an index remembers the fingerprint
    /// of the provider that built it.
    fn fingerprint(&self) -> String;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Seeded feature-hashing embedder: token counts are hashed into `dimension`
/// buckets with ±1 signs and the result is L2-normalized.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    dimension: usize,
    seed: u64,
    mode: TokenizeMode,
}

impl ToyEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < 8 {
            return Err(Error::InvalidConfig(format!(
                "toy embedder dimension must be at least 8, got {dimension}"
            )));
        }
        Ok(Self {
            dimension,
            seed,
            mode: TokenizeMode::Word,
        })
    }

    pub fn with_mode(mut self, mode: TokenizeMode) -> Self {
        self.mode = mode;
        self
    }
}

impl EmbeddingProvider for ToyEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn fingerprint(&self) -> String {
        format!(
            "toy-embed:v1:dim={}:seed={}:mode={:?}",
            self.dimension, self.seed, self.mode
        )
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(toy_embed_tokens(
            &tokenize(text, self.mode),
            self.dimension,
            self.seed,
        ))
    }
}

/// Seeded FNV-1a; `salt` decorrelates the bucket hash from the sign hash.
fn hash_term(term: &str, seed: u64, salt: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64
        ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ salt.wrapping_mul(0xd6e8_feb8_6659_fd93);
    for b in term.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Feature-hash a token list into a unit vector. An empty token list maps to
/// the first basis vector so every text has a well-defined embedding.
pub fn toy_embed(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    toy_embed_tokens(&tokenize(text, TokenizeMode::Word), dimension, seed)
}

fn toy_embed_tokens(tokens: &[String], dimension: usize, seed: u64) -> Vec<f64> {
    let mut v = vec![0.0f64; dimension];
    for token in tokens {
        let bucket = (hash_term(token, seed, 0) % dimension as u64) as usize;
        let sign = if hash_term(token, seed, 1) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
        return v;
    }
    for x in &mut v {
        *x /= norm;
    }
    v
}

const VECTOR_INDEX_VERSION: u32 = 1;

/// Dense index of unit-norm chunk embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VectorIndex {
    version: u32,
    corpus_fingerprint: String,
    provider_fingerprint: String,
    dimension: usize,
    vectors: Vec<Vec<f64>>,
}

impl VectorIndex {
    pub fn build(store: &ChunkStore, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let dimension = provider.dimension();
        let mut vectors = Vec::with_capacity(store.len());
        for chunk in store.chunks() {
            let v = provider.embed(&chunk.text)?;
            vectors.push(normalize(v, dimension, chunk.chunk_index)?);
        }
        Ok(Self {
            version: VECTOR_INDEX_VERSION,
            corpus_fingerprint: store.fingerprint().to_string(),
            provider_fingerprint: provider.fingerprint(),
            dimension,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    pub fn provider_fingerprint(&self) -> &str {
        &self.provider_fingerprint
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Self = io::read_json(path)?;
        if index.version != VECTOR_INDEX_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "vector index",
                found: index.version,
                expected: VECTOR_INDEX_VERSION,
            });
        }
        Ok(index)
    }
}

fn normalize(mut v: Vec<f64>, dimension: usize, chunk: ChunkIndex) -> Result<Vec<f64>> {
    if v.len() != dimension {
        return Err(Error::DimensionMismatch {
            index: dimension,
            provider: v.len(),
        });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "embedding for chunk {chunk} has invalid norm {norm}"
        )));
    }
    if (norm - 1.0).abs() > 1e-9 {
        for x in &mut v {
            *x /= norm;
        }
    }
    Ok(v)
}

/// Exact top-k by cosine similarity over all chunks. The provider must be
/// the one the index was built with (checked by fingerprint).
pub fn search_semantic(
    index: &VectorIndex,
    provider: &dyn EmbeddingProvider,
    query: &str,
    k: usize,
) -> Result<RankedList> {
    let pf = provider.fingerprint();
    if pf != index.provider_fingerprint {
        return Err(Error::FingerprintMismatch {
            index: index.provider_fingerprint.clone(),
            provider: pf,
        });
    }
    let q = normalize(provider.embed(query)?, index.dimension, u64::MAX)?;
    let mut entries: Vec<(ChunkIndex, f64)> = index
        .vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let dot = v.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>();
            (i as ChunkIndex, dot)
        })
        .collect();
    entries.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("cosine scores are finite")
            .then(a.0.cmp(&b.0))
    });
    entries.truncate(k);
    Ok(RankedList::new(entries, k))
}

/// Embedding endpoint request: `{"model": "...", "input": "<text>"}`.
#[derive(Debug, Serialize)]
pub struct EmbedRequest<'a> {
    pub model: &'a str,
    pub input: &'a str,
}

/// Embedding endpoint response: `{"embedding": [f64, ...]}`.
#[derive(Debug, Deserialize)]
pub struct EmbedResponse {
    pub embedding: Vec<f64>,
}

/// Client for a remote embedding service speaking the schema above. POSTs to
/// `{base_url}/embeddings` with a bearer token read from `api_key_env`.
pub struct HttpEmbeddingProvider {
    base_url: String,
    model: String,
    dimension: usize,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub fn new(
        base_url: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        api_key_env: Option<&str>,
        timeout: Duration,
    ) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("http client: {e}")))?;
        Ok(Self {
            base_url: base_url.into(),
            model: model.into(),
            dimension,
            api_key: api_key_env.and_then(|var| std::env::var(var).ok()),
            client,
        })
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn fingerprint(&self) -> String {
        format!(
            "http-embed:v1:{}@{}:dim={}",
            self.model, self.base_url, self.dimension
        )
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let url = format!("{}/embeddings", self.base_url.trim_end_matches('/'));
        let mut req = self.client.post(&url).json(&EmbedRequest {
            model: &self.model,
            input: text,
        });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp: EmbedResponse = req
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| Error::InvalidConfig(format!("embedding request failed: {e}")))?;
        Ok(resp.embedding)
    }
}

//! Corpus ingestion: documents are split into overlapping character-window
//! chunks, and the chunks form the retrieval database every other stage
//! operates on.
//!
//! Chunk indices are dense (`0..N-1`) over the whole store, assigned in
//! document order then span order, and the store is immutable once built.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

/// Dense identifier of a chunk within a [`ChunkStore`].
pub type ChunkIndex = u64;

/// A raw input document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
            meta: BTreeMap::new(),
        }
    }
}

/// One retrieval unit. `span` holds character offsets into the parent
/// document text (`start..end`, end exclusive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_index: ChunkIndex,
    pub parent_doc: String,
    pub span: (usize, usize),
    pub text: String,
}

/// Sliding-window chunking parameters. `overlap_chars` must be strictly
/// smaller than `chunk_chars` so the window always advances.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChunkConfig {
    chunk_chars: usize,
    overlap_chars: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_chars: 500,
            overlap_chars: 100,
        }
    }
}

impl ChunkConfig {
    pub fn new(chunk_chars: usize, overlap_chars: usize) -> Result<Self> {
        if chunk_chars == 0 {
            return Err(Error::InvalidConfig("chunk_chars must be positive".into()));
        }
        if overlap_chars >= chunk_chars {
            return Err(Error::InvalidConfig(format!(
                "overlap_chars ({overlap_chars}) must be smaller than chunk_chars ({chunk_chars})"
            )));
        }
        Ok(Self {
            chunk_chars,
            overlap_chars,
        })
    }

    pub fn chunk_chars(&self) -> usize {
        self.chunk_chars
    }

    pub fn overlap_chars(&self) -> usize {
        self.overlap_chars
    }
}

/// Split a document into overlapping character windows.
///
/// Consecutive chunks overlap by exactly `overlap_chars`; the final chunk
/// ends at the text end and is therefore the only one allowed to be shorter
/// than the window (but never shorter than the overlap, unless the whole
/// text is shorter than one window). Empty text yields no chunks.
///
/// Returned chunks are numbered `0..n` within this document; [`build_db`]
/// renumbers them densely across the corpus.
pub fn chunk_document(doc: &Document, cfg: &ChunkConfig) -> Vec<Chunk> {
    let chars: Vec<char> = doc.text.chars().collect();
    let n = chars.len();
    if n == 0 {
        return Vec::new();
    }
    let window = cfg.chunk_chars;
    let stride = cfg.chunk_chars - cfg.overlap_chars;
    let mut chunks = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + window).min(n);
        chunks.push(Chunk {
            chunk_index: chunks.len() as ChunkIndex,
            parent_doc: doc.doc_id.clone(),
            span: (start, end),
            text: chars[start..end].iter().collect(),
        });
        if start + window >= n {
            break;
        }
        start += stride;
    }
    chunks
}

/// Immutable chunk database with a deterministic content fingerprint.
#[derive(Debug, Clone)]
pub struct ChunkStore {
    chunks: Vec<Chunk>,
    fingerprint: String,
}

impl ChunkStore {
    fn from_chunks(chunks: Vec<Chunk>) -> Self {
        let fingerprint = fingerprint_chunks(&chunks);
        Self {
            chunks,
            fingerprint,
        }
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn get(&self, index: ChunkIndex) -> Result<&Chunk> {
        self.chunks
            .get(index as usize)
            .ok_or_else(|| Error::UnknownChunk {
                index,
                len: self.chunks.len(),
            })
    }

    pub fn parent_doc(&self, index: ChunkIndex) -> Result<&str> {
        Ok(self.get(index)?.parent_doc.as_str())
    }

    /// Content hash over every chunk record; identical inputs produce
    /// identical fingerprints.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Persist as one JSON object per line:
    /// `{"chunk_index", "parent_doc", "span": [start, end], "text"}`.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, &self.chunks)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let chunks: Vec<Chunk> = io::read_jsonl(path)?;
        for (i, chunk) in chunks.iter().enumerate() {
            if chunk.chunk_index != i as ChunkIndex {
                return Err(Error::InvalidConfig(format!(
                    "chunk store {}: expected dense index {} at line {}, found {}",
                    path.display(),
                    i,
                    i + 1,
                    chunk.chunk_index
                )));
            }
        }
        Ok(Self::from_chunks(chunks))
    }
}

fn fingerprint_chunks(chunks: &[Chunk]) -> String {
    let mut hasher = Sha256::new();
    for chunk in chunks {
        hasher.update(chunk.chunk_index.to_le_bytes());
        hasher.update((chunk.parent_doc.len() as u64).to_le_bytes());
        hasher.update(chunk.parent_doc.as_bytes());
        hasher.update((chunk.span.0 as u64).to_le_bytes());
        hasher.update((chunk.span.1 as u64).to_le_bytes());
        hasher.update((chunk.text.len() as u64).to_le_bytes());
        hasher.update(chunk.text.as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build the retrieval database: chunk every document and assign dense
/// indices in document order then span order. Rejects duplicate doc_ids.
pub fn build_db(docs: &[Document], cfg: &ChunkConfig) -> Result<ChunkStore> {
    let mut seen = HashSet::new();
    let mut chunks = Vec::new();
    for doc in docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(Error::DuplicateDocId(doc.doc_id.clone()));
        }
        for mut chunk in chunk_document(doc, cfg) {
            chunk.chunk_index = chunks.len() as ChunkIndex;
            chunks.push(chunk);
        }
    }
    Ok(ChunkStore::from_chunks(chunks))
}

/// Read corpus input: one JSON object per line with
/// `{"doc_id", "text", "meta"}`.
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    io::read_jsonl(path)
}

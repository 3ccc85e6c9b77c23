//! Lexical retrieval: inverted index plus Robertson BM25 scoring with a
//! query-side term-frequency component.
//!
//! The `k3` query factor matters here: repeating a query term multiplies its
//! contribution by `qtf*(k3+1)/(k3+qtf) > 1`, which is exactly the knob a
//! trained rewriter can exploit against this retriever.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkIndex, ChunkStore};
use crate::error::{Error, Result};
use crate::io;
use crate::retrieval::tokenize::{tokenize, TokenizeMode};
use crate::retrieval::RankedList;

/// BM25 parameters. `k1` saturates document term frequency, `b` controls
/// length normalization, `k3` saturates query term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub k3: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self {
            k1: 1.2,
            b: 0.75,
            k3: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub chunk: ChunkIndex,
    pub tf: u32,
}

const LEXICAL_INDEX_VERSION: u32 = 1;

/// Inverted index over a [`ChunkStore`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LexicalIndex {
    version: u32,
    corpus_fingerprint: String,
    params: Bm25Params,
    mode: TokenizeMode,
    num_chunks: usize,
    avgdl: f64,
    doc_lengths: Vec<usize>,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl LexicalIndex {
    pub fn build(store: &ChunkStore, params: Bm25Params, mode: TokenizeMode) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(store.len());
        for chunk in store.chunks() {
            let terms = tokenize(&chunk.text, mode);
            doc_lengths.push(terms.len());
            let mut counts: BTreeMap<String, u32> = BTreeMap::new();
            for term in terms {
                *counts.entry(term).or_insert(0) += 1;
            }
            for (term, tf) in counts {
                postings.entry(term).or_default().push(Posting {
                    chunk: chunk.chunk_index,
                    tf,
                });
            }
        }
        let total: usize = doc_lengths.iter().sum();
        let avgdl = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        Self {
            version: LEXICAL_INDEX_VERSION,
            corpus_fingerprint: store.fingerprint().to_string(),
            params,
            mode,
            num_chunks: store.len(),
            avgdl,
            doc_lengths,
            postings,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn mode(&self) -> TokenizeMode {
        self.mode
    }

    pub fn num_chunks(&self) -> usize {
        self.num_chunks
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn corpus_fingerprint(&self) -> &str {
        &self.corpus_fingerprint
    }

    /// Document frequency of a term, 0 if unseen.
    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// All indexed terms in lexicographic order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.postings.keys().map(String::as_str)
    }

    /// `ln((N - df + 0.5)/(df + 0.5) + 1)` for a known term, `None` if the
    /// term does not occur in the corpus.
    pub fn idf(&self, term: &str) -> Option<f64> {
        let df = self.df(term);
        if df == 0 {
            return None;
        }
        let n = self.num_chunks as f64;
        let df = df as f64;
        Some(((n - df + 0.5) / (df + 0.5) + 1.0).ln())
    }

    fn tf_in(&self, term: &str, chunk: ChunkIndex) -> u32 {
        match self.postings.get(term) {
            Some(list) => match list.binary_search_by_key(&chunk, |p| p.chunk) {
                Ok(i) => list[i].tf,
                Err(_) => 0,
            },
            None => 0,
        }
    }

    /// Persist the whole index as a single versioned JSON file with the
    /// corpus fingerprint embedded.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Self = io::read_json(path)?;
        if index.version != LEXICAL_INDEX_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "lexical index",
                found: index.version,
                expected: LEXICAL_INDEX_VERSION,
            });
        }
        Ok(index)
    }
}

/// Collapse a token list into (term, query term frequency) pairs in
/// first-occurrence order. Deterministic ordering keeps score summation
/// reproducible.
pub fn query_term_counts(terms: &[String]) -> Vec<(&str, u32)> {
    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for term in terms {
        let entry = counts.entry(term.as_str()).or_insert(0);
        if *entry == 0 {
            order.push(term.as_str());
        }
        *entry += 1;
    }
    order.into_iter().map(|t| (t, counts[t])).collect()
}

/// BM25 score of one chunk for a tokenized query.
///
/// Sum over distinct query terms of
/// `idf(t) * tf*(k1+1)/(tf + k1*(1 - b + b*dl/avgdl)) * qtf*(k3+1)/(k3 + qtf)`.
pub fn bm25_score(index: &LexicalIndex, query_terms: &[String], chunk: ChunkIndex) -> Result<f64> {
    if chunk as usize >= index.num_chunks {
        return Err(Error::UnknownChunk {
            index: chunk,
            len: index.num_chunks,
        });
    }
    let Bm25Params { k1, b, k3 } = index.params;
    let dl = index.doc_lengths[chunk as usize] as f64;
    let mut score = 0.0;
    for (term, qtf) in query_term_counts(query_terms) {
        let Some(idf) = index.idf(term) else {
            continue; // absent from corpus: contributes 0
        };
        let tf = index.tf_in(term, chunk) as f64;
        if tf == 0.0 {
            continue;
        }
        let tf_part = (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / index.avgdl));
        let qtf = qtf as f64;
        let qtf_part = (qtf * (k3 + 1.0)) / (k3 + qtf);
        score += idf * tf_part * qtf_part;
    }
    Ok(score)
}

/// Top-k chunks by BM25. Chunks matching no query term are excluded; ties
/// break by ascending chunk index.
pub fn search_lexical(index: &LexicalIndex, query: &str, k: usize) -> RankedList {
    let terms = tokenize(query, index.mode);
    let Bm25Params { k1, b, k3 } = index.params;
    let mut scores: HashMap<ChunkIndex, f64> = HashMap::new();
    for (term, qtf) in query_term_counts(&terms) {
        let Some(idf) = index.idf(term) else {
            continue;
        };
        let qtf = qtf as f64;
        let qtf_part = (qtf * (k3 + 1.0)) / (k3 + qtf);
        for posting in &index.postings[term] {
            let dl = index.doc_lengths[posting.chunk as usize] as f64;
            let tf = posting.tf as f64;
            let tf_part = (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * dl / index.avgdl));
            *scores.entry(posting.chunk).or_insert(0.0) += idf * tf_part * qtf_part;
        }
    }
    let mut entries: Vec<(ChunkIndex, f64)> = scores.into_iter().collect();
    entries.sort_unstable_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("BM25 scores are finite")
            .then(a.0.cmp(&b.0))
    });
    entries.truncate(k);
    RankedList::new(entries, k)
}

//! The rewrite policy: a per-term softmax over edit actions.
//!
//! Each query term is independently assigned one of four actions — drop it,
//! keep it, or repeat it two or three times — from a linear softmax over
//! per-term features. This is the smallest policy class that can express the
//! behaviors a lexical retriever rewards: dropping scenario noise and
//! repeating discriminative keywords. Repetition caps at three because the
//! BM25 query-frequency factor saturates quickly.
//!
//! The module also defines the wire contract for plugging in an external
//! token-level policy (see [`ScoreRequest`]/[`ScoreResponse`]); the trainer
//! only ever consumes per-step log-probabilities, so it is agnostic to what
//! generates the text.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::retrieval::tokenize::{is_cjk, tokenize, TokenizeMode};
use crate::retrieval::LexicalIndex;

/// Per-term feature vector layout: bias, normalized position, log(1+qtf),
/// idf (0 if unknown), term length / 10, is-CJK flag.
pub const FEATURE_DIM: usize = 6;

pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewriteAction {
    Drop,
    Keep,
    Repeat2,
    Repeat3,
}

impl RewriteAction {
    pub const ALL: [RewriteAction; NUM_ACTIONS] = [
        RewriteAction::Drop,
        RewriteAction::Keep,
        RewriteAction::Repeat2,
        RewriteAction::Repeat3,
    ];

    pub fn index(self) -> usize {
        match self {
            RewriteAction::Drop => 0,
            RewriteAction::Keep => 1,
            RewriteAction::Repeat2 => 2,
            RewriteAction::Repeat3 => 3,
        }
    }

    pub fn repetitions(self) -> usize {
        match self {
            RewriteAction::Drop => 0,
            RewriteAction::Keep => 1,
            RewriteAction::Repeat2 => 2,
            RewriteAction::Repeat3 => 3,
        }
    }
}

const POLICY_VERSION: u32 = 1;

/// Trainable weights: a `FEATURE_DIM x NUM_ACTIONS` matrix stored row-major
/// by feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    version: u32,
    pub feature_dim: usize,
    pub actions: Vec<String>,
    pub w: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            version: POLICY_VERSION,
            feature_dim: FEATURE_DIM,
            actions: RewriteAction::ALL
                .iter()
                .map(|a| serde_json::to_value(a).unwrap().as_str().unwrap().to_string())
                .collect(),
            w: vec![0.0; FEATURE_DIM * NUM_ACTIONS],
        }
    }

    #[inline]
    pub fn weight(&self, feature: usize, action: usize) -> f64 {
        self.w[feature * NUM_ACTIONS + action]
    }

    #[inline]
    pub fn weight_mut(&mut self, feature: usize, action: usize) -> &mut f64 {
        &mut self.w[feature * NUM_ACTIONS + action]
    }

    /// `z_a = sum_i W[i][a] * f[i]` for each action.
    pub fn logits(&self, features: &[f64; FEATURE_DIM]) -> [f64; NUM_ACTIONS] {
        let mut z = [0.0; NUM_ACTIONS];
        for (i, f) in features.iter().enumerate() {
            for (a, za) in z.iter_mut().enumerate() {
                *za += self.weight(i, a) * f;
            }
        }
        z
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let params: Self = io::read_json(path)?;
        if params.version != POLICY_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "policy params",
                found: params.version,
                expected: POLICY_VERSION,
            });
        }
        if params.w.len() != params.feature_dim * NUM_ACTIONS {
            return Err(Error::InvalidConfig(format!(
                "policy weight matrix has {} entries, expected {}",
                params.w.len(),
                params.feature_dim * NUM_ACTIONS
            )));
        }
        Ok(params)
    }
}

/// Numerically stable log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64; NUM_ACTIONS], temperature: f64) -> [f64; NUM_ACTIONS] {
    debug_assert!(temperature > 0.0);
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    let mut out = [0.0; NUM_ACTIONS];
    for (o, z) in out.iter_mut().zip(&scaled) {
        *o = z - log_z;
    }
    out
}

/// Snapshot of the statistics a term is featurized against: corpus idf per
/// term plus the tokenize mode the index was built with.
#[derive(Debug, Clone)]
pub struct TermFeaturizer {
    idf: HashMap<String, f64>,
    mode: TokenizeMode,
}

impl TermFeaturizer {
    pub fn from_lexical(index: &LexicalIndex) -> Self {
        let idf = index
            .terms()
            .filter_map(|term| index.idf(term).map(|v| (term.to_string(), v)))
            .collect();
        Self {
            idf,
            mode: index.mode(),
        }
    }

    /// Featurizer with no corpus statistics (idf feature always 0).
    pub fn empty(mode: TokenizeMode) -> Self {
        Self {
            idf: HashMap::new(),
            mode,
        }
    }

    pub fn mode(&self) -> TokenizeMode {
        self.mode
    }

    pub fn idf(&self, term: &str) -> f64 {
        self.idf.get(term).copied().unwrap_or(0.0)
    }

    /// Features for one term at `position` of a query with `n_terms` terms,
    /// where the term occurs `qtf` times in the query.
    pub fn featurize_term(
        &self,
        term: &str,
        position: usize,
        n_terms: usize,
        qtf: usize,
    ) -> [f64; FEATURE_DIM] {
        let pos_norm = if n_terms > 1 {
            position as f64 / (n_terms - 1) as f64
        } else {
            0.0
        };
        [
            1.0,
            pos_norm,
            (1.0 + qtf as f64).ln(),
            self.idf(term),
            term.chars().count() as f64 / 10.0,
            if term.chars().any(is_cjk) { 1.0 } else { 0.0 },
        ]
    }

    /// Tokenize a query and featurize every term.
    pub fn featurize_query(&self, query: &str) -> (Vec<String>, Vec<[f64; FEATURE_DIM]>) {
        let terms = tokenize(query, self.mode);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &terms {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
        let n = terms.len();
        let features = terms
            .iter()
            .enumerate()
            .map(|(i, t)| self.featurize_term(t, i, n, counts[t.as_str()]))
            .collect();
        (terms, features)
    }
}

/// One sampled rewrite. `output` is the full generation (always wrapped in
/// answer tags for this policy); `rewritten_query` is the inner text.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub actions: Vec<RewriteAction>,
    pub logprobs: Vec<f64>,
    pub rewritten_query: String,
    pub output: String,
}

/// Expand terms by their actions, joined by single spaces in original
/// order. If every term is dropped the full term sequence is restored, so
/// the rewrite never degenerates to an empty query.
pub fn apply_actions(terms: &[String], actions: &[RewriteAction]) -> Result<String> {
    if terms.len() != actions.len() {
        return Err(Error::ActionLengthMismatch {
            actions: actions.len(),
            terms: terms.len(),
        });
    }
    let mut out: Vec<&str> = Vec::new();
    for (term, action) in terms.iter().zip(actions) {
        for _ in 0..action.repetitions() {
            out.push(term);
        }
    }
    if out.is_empty() {
        Ok(terms.join(" "))
    } else {
        Ok(out.join(" "))
    }
}

fn wrap_output(rewritten: &str) -> String {
    format!("<answer>{rewritten}</answer>")
}

fn finish_rollout(
    query: &str,
    terms: &[String],
    actions: Vec<RewriteAction>,
    logprobs: Vec<f64>,
) -> Rollout {
    let rewritten_query = if terms.is_empty() {
        query.to_string()
    } else {
        apply_actions(terms, &actions).expect("lengths match by construction")
    };
    let output = wrap_output(&rewritten_query);
    Rollout {
        actions,
        logprobs,
        rewritten_query,
        output,
    }
}

/// Sample one rewrite: per term, draw an action from
/// `softmax(W * features / temperature)` and record its log-probability.
pub fn sample_rewrite(
    params: &PolicyParams,
    featurizer: &TermFeaturizer,
    query: &str,
    temperature: f64,
    rng: &mut impl Rng,
) -> Rollout {
    assert!(temperature > 0.0, "temperature must be positive");
    let (terms, features) = featurizer.featurize_query(query);
    let mut actions = Vec::with_capacity(terms.len());
    let mut logprobs = Vec::with_capacity(terms.len());
    for f in &features {
        let lp = log_softmax(&params.logits(f), temperature);
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut chosen = NUM_ACTIONS - 1;
        for (a, l) in lp.iter().enumerate() {
            cum += l.exp();
            if u < cum {
                chosen = a;
                break;
            }
        }
        actions.push(RewriteAction::ALL[chosen]);
        logprobs.push(lp[chosen]);
    }
    finish_rollout(query, &terms, actions, logprobs)
}

/// Deterministic argmax decoding (the temperature-to-zero limit). Recorded
/// log-probabilities are the temperature-1 values of the chosen actions.
pub fn greedy_rewrite(params: &PolicyParams, featurizer: &TermFeaturizer, query: &str) -> Rollout {
    let (terms, features) = featurizer.featurize_query(query);
    let mut actions = Vec::with_capacity(terms.len());
    let mut logprobs = Vec::with_capacity(terms.len());
    for f in &features {
        let lp = log_softmax(&params.logits(f), 1.0);
        let best = lp
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
            .map(|(i, _)| i)
            .expect("non-empty action set");
        actions.push(RewriteAction::ALL[best]);
        logprobs.push(lp[best]);
    }
    finish_rollout(query, &terms, actions, logprobs)
}

/// Log-probabilities of a fixed action sequence under `params`, one entry
/// per step.
pub fn sequence_logprobs(
    params: &PolicyParams,
    features: &[[f64; FEATURE_DIM]],
    actions: &[RewriteAction],
    temperature: f64,
) -> Vec<f64> {
    features
        .iter()
        .zip(actions)
        .map(|(f, a)| log_softmax(&params.logits(f), temperature)[a.index()])
        .collect()
}

/// Exact gradient of `sum_t log pi(action_t)` with respect to the weight
/// matrix, plus the per-step log-probabilities under the current params.
///
/// Per step: `d log p(a) / d W[i][j] = f[i] * (1[j == a] - p_j) / T`.
pub fn logprob_gradient(
    params: &PolicyParams,
    features: &[[f64; FEATURE_DIM]],
    actions: &[RewriteAction],
    temperature: f64,
) -> (Vec<f64>, Vec<f64>) {
    let mut grad = vec![0.0; FEATURE_DIM * NUM_ACTIONS];
    let mut logprobs = Vec::with_capacity(actions.len());
    for (f, action) in features.iter().zip(actions) {
        let lp = log_softmax(&params.logits(f), temperature);
        let a = action.index();
        logprobs.push(lp[a]);
        for (i, fi) in f.iter().enumerate() {
            for j in 0..NUM_ACTIONS {
                let indicator = if j == a { 1.0 } else { 0.0 };
                grad[i * NUM_ACTIONS + j] += fi * (indicator - lp[j].exp()) / temperature;
            }
        }
    }
    (grad, logprobs)
}

/// Bundle of everything needed to rewrite queries at evaluation time.
pub struct Rewriter {
    pub name: String,
    pub params: PolicyParams,
    pub featurizer: TermFeaturizer,
}

impl Rewriter {
    pub fn rewrite_greedy(&self, query: &str) -> String {
        greedy_rewrite(&self.params, &self.featurizer, query).rewritten_query
    }
}

/// External-policy scoring request:
/// `{"prompt": "...", "continuation": ["tok", ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuation: Vec<String>,
}

/// External-policy scoring response with one log-probability per
/// continuation token under the current and the snapshot parameters:
/// `{"current_logprobs": [...], "old_logprobs": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub current_logprobs: Vec<f64>,
    pub old_logprobs: Vec<f64>,
}

/// Adapter contract for token-level policies living outside this process.
/// The trainer only needs log-probabilities; text generation stays on the
/// other side of this interface.
pub trait ExternalPolicy {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse>;
}

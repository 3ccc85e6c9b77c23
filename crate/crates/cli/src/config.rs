//! Run configuration: a single JSON document covering every stage, with
//! CLI overrides applied through dotted paths (`--set grpo.learning_rate=0.1`).
//!
//! Unknown keys are rejected, so typos in config files fail loudly instead
//! of silently falling back to defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use requery_core::grpo::GrpoConfig;
use requery_core::retrieval::{Bm25Params, HybridConfig, TokenizeMode};
use requery_core::reward::RewardConfig;
use requery_core::synth::provider::ProviderConfig;
use requery_core::synth::FilterConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; drives the toy embedder, rollout sampling, and
    /// shuffling. Training uses this value, not `grpo.seed`.
    pub seed: u64,
    /// Training-scheme preset pairing a rewriter with its retriever:
    /// `lexical`, `semantic`, or `hybrid`.
    pub preset: Option<String>,
    pub paths: Paths,
    pub chunking: ChunkingSection,
    pub tokenize_mode: TokenizeMode,
    pub retriever: RetrieverSection,
    pub provider: ProviderSection,
    pub filters: FilterConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            preset: None,
            paths: Paths::default(),
            chunking: ChunkingSection::default(),
            tokenize_mode: TokenizeMode::Word,
            retriever: RetrieverSection::default(),
            provider: ProviderSection::default(),
            filters: FilterConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus: PathBuf,
    pub chunks: PathBuf,
    pub dataset: PathBuf,
    pub synth_report: PathBuf,
    pub lexical_index: PathBuf,
    pub vector_index: PathBuf,
    pub policy: PathBuf,
    pub checkpoints: PathBuf,
    pub train_log: PathBuf,
    pub report: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "corpus.jsonl".into(),
            chunks: "chunks.jsonl".into(),
            dataset: "dataset.jsonl".into(),
            synth_report: "synth_report.json".into(),
            lexical_index: "lexical_index.json".into(),
            vector_index: "vector_index.json".into(),
            policy: "policy.json".into(),
            checkpoints: "checkpoints".into(),
            train_log: "train_log.jsonl".into(),
            report: "eval_report.json".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChunkingSection {
    pub chunk_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkingSection {
    fn default() -> Self {
        Self {
            chunk_chars: 500,
            overlap_chars: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Lexical,
    Semantic,
    Hybrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrieverSection {
    pub kind: RetrieverKind,
    pub bm25: Bm25Params,
    pub hybrid: HybridConfig,
    pub embedding: EmbeddingSection,
}

impl Default for RetrieverSection {
    fn default() -> Self {
        Self {
            kind: RetrieverKind::Lexical,
            bm25: Bm25Params::default(),
            hybrid: HybridConfig::default(),
            embedding: EmbeddingSection::default(),
        }
    }
}

/// Settings for the embedding provider behind the semantic retriever. The
/// seeded toy embedder is the default; `http` switches to a remote endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingSection {
    pub provider: EmbeddingProviderKind,
    pub dimension: usize,
    pub seed: u64,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            provider: EmbeddingProviderKind::Toy,
            dimension: 64,
            seed: 0,
            base_url: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingProviderKind {
    Toy,
    Http,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSection {
    /// Replay completions from this file instead of calling an endpoint.
    pub scripted_path: Option<PathBuf>,
    /// Chat-completions endpoint; required when no scripted path is set.
    pub http: Option<ProviderConfig>,
    /// Concurrent synthesis requests.
    pub fan_out: Option<usize>,
}

impl RunConfig {
    /// Load order: built-in defaults, then the config file, then `--set`
    /// overrides, then dedicated flags (seed, preset).
    pub fn load(
        config_path: Option<&Path>,
        sets: &[String],
        seed: Option<u64>,
        preset: Option<&str>,
    ) -> Result<Self> {
        let mut value = match config_path {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for set in sets {
            apply_set(&mut value, set)?;
        }
        let mut config: RunConfig =
            serde_json::from_value(value).context("validating configuration")?;
        if let Some(seed) = seed {
            config.seed = seed;
        }
        if let Some(preset) = preset {
            config.apply_preset(preset)?;
        } else if let Some(name) = config.preset.clone() {
            config.apply_preset(&name)?;
        }
        Ok(config)
    }

    /// Presets pair a rewriter with the retriever it trains against.
    fn apply_preset(&mut self, name: &str) -> Result<()> {
        self.retriever.kind = match name {
            "lexical" => RetrieverKind::Lexical,
            "semantic" => RetrieverKind::Semantic,
            "hybrid" => RetrieverKind::Hybrid,
            other => bail!("unknown preset `{other}` (expected lexical, semantic, or hybrid)"),
        };
        self.preset = Some(name.to_string());
        Ok(())
    }
}

/// Apply one `key.path=value` override onto the raw config document. Values
/// parse as JSON when possible and fall back to plain strings.
fn apply_set(root: &mut serde_json::Value, set: &str) -> Result<()> {
    let (path, raw_value) = set
        .split_once('=')
        .ok_or_else(|| anyhow!("--set expects KEY.PATH=VALUE, got `{set}`"))?;
    if path.is_empty() {
        bail!("--set expects a non-empty key path, got `{set}`");
    }
    let value: serde_json::Value = serde_json::from_str(raw_value)
        .unwrap_or_else(|_| serde_json::Value::String(raw_value.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        if !cursor.is_object() {
            bail!("--set path `{path}`: `{}` is not an object", segments[..i].join("."));
        }
        let map = cursor.as_object_mut().expect("checked above");
        if i + 1 == segments.len() {
            map.insert(segment.to_string(), value);
            return Ok(());
        }
        cursor = map
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("loop always returns on the last segment")
}

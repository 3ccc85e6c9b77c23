//! Command implementations. Each command reads its inputs up front, runs one
//! pipeline stage, and writes outputs atomically.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use requery_core::corpus::{build_db, read_documents, ChunkConfig, ChunkStore};
use requery_core::demo::{run_demo, DemoConfig};
use requery_core::eval::{cross_matrix, render_csv, render_table, EvalReport};
use requery_core::grpo::{train_loop, GrpoConfig, TrainContext};
use requery_core::io;
use requery_core::policy::{PolicyParams, Rewriter, TermFeaturizer};
use requery_core::retrieval::{
    EmbeddingProvider, HttpEmbeddingProvider, HybridRetriever, LexicalIndex, LexicalRetriever,
    Retriever, SemanticRetriever, ToyEmbedder, VectorIndex,
};
use requery_core::reward::RewardEvaluator;
use requery_core::synth::provider::{
    CompletionProvider, HttpCompletionProvider, ScriptedProvider,
};
use requery_core::synth::{build_training_set, load_dataset, save_dataset, QuerySample};

use crate::config::{EmbeddingProviderKind, EmbeddingSection, RetrieverKind, RunConfig};

/// Marker for operator mistakes (exit code 1) as opposed to stage failures
/// (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found at {}", path.display());
    }
    Ok(())
}

fn load_store(path: &Path) -> Result<ChunkStore> {
    require_file(path, "chunk store")?;
    Ok(ChunkStore::load(path)?)
}

fn load_lexical(path: &Path, store: &ChunkStore) -> Result<LexicalIndex> {
    require_file(path, "lexical index")?;
    let index = LexicalIndex::load(path)?;
    if index.corpus_fingerprint() != store.fingerprint() {
        bail!(
            "lexical index {} was built for corpus `{}` but the store is `{}`; re-run `index`",
            path.display(),
            index.corpus_fingerprint(),
            store.fingerprint()
        );
    }
    Ok(index)
}

fn load_vector(path: &Path, store: &ChunkStore) -> Result<VectorIndex> {
    require_file(path, "vector index")?;
    let index = VectorIndex::load(path)?;
    if index.corpus_fingerprint() != store.fingerprint() {
        bail!(
            "vector index {} was built for corpus `{}` but the store is `{}`; re-run `index`",
            path.display(),
            index.corpus_fingerprint(),
            store.fingerprint()
        );
    }
    Ok(index)
}

fn embedding_provider(section: &EmbeddingSection) -> Result<Box<dyn EmbeddingProvider>> {
    match section.provider {
        EmbeddingProviderKind::Toy => Ok(Box::new(ToyEmbedder::new(
            section.dimension,
            section.seed,
        )?)),
        EmbeddingProviderKind::Http => {
            let base_url = section
                .base_url
                .as_deref()
                .ok_or_else(|| usage("embedding.base_url is required for the http provider"))?;
            let model = section
                .model
                .as_deref()
                .ok_or_else(|| usage("embedding.model is required for the http provider"))?;
            Ok(Box::new(HttpEmbeddingProvider::new(
                base_url,
                model,
                section.dimension,
                section.api_key_env.as_deref(),
                std::time::Duration::from_secs(section.timeout_secs),
            )?))
        }
    }
}

pub fn cmd_ingest(
    config: &RunConfig,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let corpus_path = corpus.unwrap_or_else(|| config.paths.corpus.clone());
    let out_path = out.unwrap_or_else(|| config.paths.chunks.clone());
    require_file(&corpus_path, "corpus input")?;
    let docs = read_documents(&corpus_path)?;
    let chunk_cfg = ChunkConfig::new(config.chunking.chunk_chars, config.chunking.overlap_chars)?;
    let store = build_db(&docs, &chunk_cfg)?;
    store.save(&out_path)?;
    println!(
        "ingested {} documents into {} chunks -> {}",
        docs.len(),
        store.len(),
        out_path.display()
    );
    println!("corpus fingerprint: {}", store.fingerprint());
    Ok(())
}

pub fn cmd_synth(
    config: &RunConfig,
    chunks: Option<PathBuf>,
    out: Option<PathBuf>,
    scripted: Option<PathBuf>,
) -> Result<()> {
    let chunks_path = chunks.unwrap_or_else(|| config.paths.chunks.clone());
    let out_path = out.unwrap_or_else(|| config.paths.dataset.clone());
    let store = load_store(&chunks_path)?;

    let scripted_path = scripted.or_else(|| config.provider.scripted_path.clone());
    let provider: Box<dyn CompletionProvider> = match scripted_path {
        Some(path) => {
            require_file(&path, "scripted completions")?;
            Box::new(ScriptedProvider::from_path(&path)?)
        }
        None => {
            let http = config.provider.http.clone().ok_or_else(|| {
                usage("no completion provider: set provider.http in the config or pass --scripted")
            })?;
            Box::new(HttpCompletionProvider::new(http).map_err(|e| anyhow!("{e}"))?)
        }
    };

    let fan_out = config.provider.fan_out.unwrap_or(4);
    let (samples, report) = build_training_set(&store, provider.as_ref(), &config.filters, fan_out)?;
    save_dataset(&out_path, &samples)?;
    io::write_json(&config.paths.synth_report, &report)?;
    println!(
        "synthesized {}/{} samples (acceptance {:.1}%) -> {}",
        report.accepted,
        report.total_chunks,
        report.acceptance_rate() * 100.0,
        out_path.display()
    );
    for (reason, count) in &report.rejected {
        println!("  rejected {count}: {reason}");
    }
    Ok(())
}

pub fn cmd_index(
    config: &RunConfig,
    chunks: Option<PathBuf>,
    lexical_out: Option<PathBuf>,
    vector_out: Option<PathBuf>,
    with_vector: bool,
) -> Result<()> {
    let chunks_path = chunks.unwrap_or_else(|| config.paths.chunks.clone());
    let store = load_store(&chunks_path)?;

    let lexical_path = lexical_out.unwrap_or_else(|| config.paths.lexical_index.clone());
    let lexical = LexicalIndex::build(&store, config.retriever.bm25, config.tokenize_mode);
    lexical.save(&lexical_path)?;
    println!(
        "lexical index over {} chunks -> {}",
        store.len(),
        lexical_path.display()
    );

    let needs_vector = with_vector || config.retriever.kind != RetrieverKind::Lexical;
    if needs_vector {
        let provider = embedding_provider(&config.retriever.embedding)?;
        let vector_path = vector_out.unwrap_or_else(|| config.paths.vector_index.clone());
        let vector = VectorIndex::build(&store, provider.as_ref())?;
        vector.save(&vector_path)?;
        println!(
            "vector index ({} dims, provider {}) -> {}",
            vector.dimension(),
            vector.provider_fingerprint(),
            vector_path.display()
        );
    }
    Ok(())
}

/// Indexes plus provider, bundled so retrievers can borrow from one place.
struct RetrieverStack {
    lexical: LexicalIndex,
    vector: Option<VectorIndex>,
    provider: Option<Box<dyn EmbeddingProvider>>,
}

impl RetrieverStack {
    fn load(config: &RunConfig, store: &ChunkStore, kinds: &[RetrieverKind]) -> Result<Self> {
        let lexical = load_lexical(&config.paths.lexical_index, store)?;
        let needs_vector = kinds
            .iter()
            .any(|k| *k != RetrieverKind::Lexical);
        let (vector, provider) = if needs_vector {
            (
                Some(load_vector(&config.paths.vector_index, store)?),
                Some(embedding_provider(&config.retriever.embedding)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            lexical,
            vector,
            provider,
        })
    }

    fn retriever(&self, kind: RetrieverKind, config: &RunConfig) -> Box<dyn Retriever + '_> {
        match kind {
            RetrieverKind::Lexical => Box::new(LexicalRetriever {
                index: &self.lexical,
            }),
            RetrieverKind::Semantic => Box::new(SemanticRetriever {
                index: self.vector.as_ref().expect("vector index loaded"),
                provider: self.provider.as_deref().expect("provider built"),
            }),
            RetrieverKind::Hybrid => Box::new(HybridRetriever {
                lexical: &self.lexical,
                vector: self.vector.as_ref().expect("vector index loaded"),
                provider: self.provider.as_deref().expect("provider built"),
                config: config.retriever.hybrid,
            }),
        }
    }
}

fn load_samples(path: &Path) -> Result<Vec<QuerySample>> {
    require_file(path, "dataset")?;
    Ok(load_dataset(path)?)
}

pub fn cmd_train(
    config: &RunConfig,
    chunks: Option<PathBuf>,
    dataset: Option<PathBuf>,
    out: Option<PathBuf>,
    log_out: Option<PathBuf>,
) -> Result<()> {
    let store = load_store(&chunks.unwrap_or_else(|| config.paths.chunks.clone()))?;
    let samples = load_samples(&dataset.unwrap_or_else(|| config.paths.dataset.clone()))?;
    let stack = RetrieverStack::load(config, &store, &[config.retriever.kind])?;
    let retriever = stack.retriever(config.retriever.kind, config);
    let featurizer = TermFeaturizer::from_lexical(&stack.lexical);
    let evaluator = RewardEvaluator::new(&store, config.reward);
    let ctx = TrainContext {
        featurizer: &featurizer,
        retriever: retriever.as_ref(),
        evaluator: &evaluator,
    };
    let grpo_cfg = GrpoConfig {
        seed: config.seed,
        ..config.grpo.clone()
    };
    let (params, log) = train_loop(
        &samples,
        PolicyParams::zeros(),
        &ctx,
        &grpo_cfg,
        Some(&config.paths.checkpoints),
    )?;

    let policy_path = out.unwrap_or_else(|| config.paths.policy.clone());
    let log_path = log_out.unwrap_or_else(|| config.paths.train_log.clone());
    params.save(&policy_path)?;
    log.save(&log_path)?;

    let first = log.records.first();
    let last = log.records.last();
    println!(
        "trained rewriter on `{}` over {} samples, {} steps -> {}",
        retriever.name(),
        samples.len(),
        log.records.len(),
        policy_path.display()
    );
    if let (Some(first), Some(last)) = (first, last) {
        println!(
            "mean sampled reward: {:.4} (step 1) -> {:.4} (step {})",
            first.mean_reward, last.mean_reward, last.step
        );
    }
    Ok(())
}

fn parse_policy_flag(spec: &str) -> Result<(String, PathBuf)> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--policy expects NAME=PATH, got `{spec}`")))?;
    if name.is_empty() || path.is_empty() {
        return Err(usage(format!("--policy expects NAME=PATH, got `{spec}`")));
    }
    Ok((name.to_string(), PathBuf::from(path)))
}

fn retriever_kinds(selector: Option<&str>, config: &RunConfig) -> Result<Vec<RetrieverKind>> {
    match selector {
        None => Ok(vec![config.retriever.kind]),
        Some("all") => Ok(vec![
            RetrieverKind::Lexical,
            RetrieverKind::Semantic,
            RetrieverKind::Hybrid,
        ]),
        Some("lexical") => Ok(vec![RetrieverKind::Lexical]),
        Some("semantic") => Ok(vec![RetrieverKind::Semantic]),
        Some("hybrid") => Ok(vec![RetrieverKind::Hybrid]),
        Some(other) => Err(usage(format!(
            "unknown retriever `{other}` (expected lexical, semantic, hybrid, or all)"
        ))),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    config: &RunConfig,
    chunks: Option<PathBuf>,
    dataset: Option<PathBuf>,
    retriever_selector: Option<String>,
    policies: &[String],
    out: Option<PathBuf>,
    csv: Option<PathBuf>,
) -> Result<()> {
    let store = load_store(&chunks.unwrap_or_else(|| config.paths.chunks.clone()))?;
    let samples = load_samples(&dataset.unwrap_or_else(|| config.paths.dataset.clone()))?;
    let kinds = retriever_kinds(retriever_selector.as_deref(), config)?;
    let stack = RetrieverStack::load(config, &store, &kinds)?;

    let featurizer = TermFeaturizer::from_lexical(&stack.lexical);
    let mut rewriters = Vec::new();
    for spec in policies {
        let (name, path) = parse_policy_flag(spec)?;
        require_file(&path, "policy params")?;
        rewriters.push(Rewriter {
            name,
            params: PolicyParams::load(&path)?,
            featurizer: featurizer.clone(),
        });
    }

    let retrievers: Vec<Box<dyn Retriever + '_>> = kinds
        .iter()
        .map(|k| stack.retriever(*k, config))
        .collect();
    let retriever_refs: Vec<&dyn Retriever> = retrievers.iter().map(|b| b.as_ref()).collect();
    let rewriter_refs: Vec<&Rewriter> = rewriters.iter().collect();

    let evaluator = RewardEvaluator::new(&store, config.reward);
    let reports = cross_matrix(&samples, &retriever_refs, &rewriter_refs, &evaluator)?;

    let report_path = out.unwrap_or_else(|| config.paths.report.clone());
    io::write_json(&report_path, &reports)?;
    print!("{}", render_table(&reports, config.reward.ndcg_k));
    println!("report -> {}", report_path.display());
    if let Some(csv_path) = csv {
        io::write_atomic(&csv_path, render_csv(&reports).as_bytes())?;
        println!("csv -> {}", csv_path.display());
    }
    Ok(())
}

pub fn cmd_report(config: &RunConfig, reports: &[PathBuf], csv: Option<PathBuf>) -> Result<()> {
    if reports.is_empty() {
        return Err(usage("report expects at least one eval report JSON file"));
    }
    let mut all: Vec<EvalReport> = Vec::new();
    for path in reports {
        require_file(path, "eval report")?;
        let mut batch: Vec<EvalReport> = io::read_json(path)?;
        all.append(&mut batch);
    }
    print!("{}", render_table(&all, config.reward.ndcg_k));
    if let Some(csv_path) = csv {
        io::write_atomic(&csv_path, render_csv(&all).as_bytes())?;
        println!("csv -> {}", csv_path.display());
    }
    Ok(())
}

pub fn cmd_demo(config: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out_dir = out.unwrap_or_else(|| PathBuf::from("demo-out"));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let checkpoints = out_dir.join("checkpoints");
    std::fs::create_dir_all(&checkpoints)
        .with_context(|| format!("creating {}", checkpoints.display()))?;

    let demo_cfg = DemoConfig {
        seed: config.seed,
        ..DemoConfig::default()
    };
    let outcome = run_demo(&demo_cfg, Some(&checkpoints))?;

    outcome.store.save(&out_dir.join("chunks.jsonl"))?;
    save_dataset(&out_dir.join("dataset.jsonl"), &outcome.dataset)?;
    outcome.log.save(&out_dir.join("train_log.jsonl"))?;
    outcome.params.save(&out_dir.join("policy.json"))?;
    let reports = vec![outcome.baseline.clone(), outcome.trained.clone()];
    io::write_json(&out_dir.join("eval_report.json"), &reports)?;
    let table = render_table(&reports, demo_cfg.eval_reward.ndcg_k);
    io::write_atomic(&out_dir.join("report.txt"), table.as_bytes())?;

    print!("{table}");
    println!(
        "NDCG@{}: raw {:.4} -> trained {:.4} ({:+.4} absolute)",
        demo_cfg.eval_reward.ndcg_k,
        outcome.baseline.mean_ndcg,
        outcome.trained.mean_ndcg,
        outcome.gain()
    );
    println!("artifacts -> {}", out_dir.display());
    Ok(())
}

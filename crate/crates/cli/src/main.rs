//! `requery` — train and evaluate retriever-specific query rewriters.
//!
//! Pipeline: `ingest -> synth -> index -> train -> eval -> report`, plus
//! `demo`, which runs the whole loop on a built-in synthetic corpus with no
//! external services.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use commands::UsageError;
use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "requery",
    version,
    about = "Query-rewriter training pipeline: chunk a corpus, synthesize queries, index, train with GRPO, evaluate"
)]
struct Cli {
    /// JSON configuration file; flags and --set entries override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed for every stochastic stage.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Training-scheme preset: lexical, semantic, or hybrid.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,

    /// Override a config key by dotted path, e.g. --set grpo.learning_rate=0.1
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chunk raw documents (JSONL) into the retrieval database.
    Ingest {
        #[arg(long, value_name = "PATH")]
        corpus: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Generate scenario-style training queries for every chunk.
    Synth {
        #[arg(long, value_name = "PATH")]
        chunks: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Replay completions from a file instead of calling an endpoint.
        #[arg(long, value_name = "PATH")]
        scripted: Option<PathBuf>,
    },
    /// Build the lexical (and, when configured, vector) index.
    Index {
        #[arg(long, value_name = "PATH")]
        chunks: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        lexical_out: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        vector_out: Option<PathBuf>,
        /// Build the vector index even for a lexical-only setup.
        #[arg(long)]
        vector: bool,
    },
    /// Train the rewrite policy with GRPO against the configured retriever.
    Train {
        #[arg(long, value_name = "PATH")]
        chunks: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// Where to write the trained policy.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        log: Option<PathBuf>,
    },
    /// Evaluate raw queries and any rewriters on one or all retrievers.
    Eval {
        #[arg(long, value_name = "PATH")]
        chunks: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        dataset: Option<PathBuf>,
        /// lexical, semantic, hybrid, or all (default: configured kind).
        #[arg(long, value_name = "KIND")]
        retriever: Option<String>,
        /// Rewriter to evaluate, repeatable: NAME=policy.json
        #[arg(long = "policy", value_name = "NAME=PATH")]
        policies: Vec<String>,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Render saved eval reports as a comparison table.
    Report {
        /// Eval report JSON files.
        #[arg(value_name = "REPORT", num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long, value_name = "PATH")]
        csv: Option<PathBuf>,
    },
    /// Run the built-in synthetic end-to-end scenario (no network needed).
    Demo {
        /// Output directory for all demo artifacts.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Synth { .. } => "synth",
            Command::Index { .. } => "index",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Report { .. } => "report",
            Command::Demo { .. } => "demo",
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(
        cli.config.as_deref(),
        &cli.sets,
        cli.seed,
        cli.preset.as_deref(),
    )
    .map_err(|e| anyhow::Error::new(UsageError(format!("{e:#}"))))?;

    match cli.command {
        Command::Ingest { corpus, out } => commands::cmd_ingest(&config, corpus, out),
        Command::Synth {
            chunks,
            out,
            scripted,
        } => commands::cmd_synth(&config, chunks, out, scripted),
        Command::Index {
            chunks,
            lexical_out,
            vector_out,
            vector,
        } => commands::cmd_index(&config, chunks, lexical_out, vector_out, vector),
        Command::Train {
            chunks,
            dataset,
            out,
            log,
        } => commands::cmd_train(&config, chunks, dataset, out, log),
        Command::Eval {
            chunks,
            dataset,
            retriever,
            policies,
            out,
            csv,
        } => commands::cmd_eval(&config, chunks, dataset, retriever, &policies, out, csv),
        Command::Report { reports, csv } => commands::cmd_report(&config, &reports, csv),
        Command::Demo { out } => commands::cmd_demo(&config, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version are not errors; everything else is a usage error
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };

    let stage = cli.command.stage();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if err.is::<UsageError>() => {
            eprintln!("usage error: {err}");
            ExitCode::from(1)
        }
        Err(err) => {
            eprintln!("error in stage `{stage}`: {err:#}");
            ExitCode::from(2)
        }
    }
}

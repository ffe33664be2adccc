//! `deepmatch`: data generation, training, indexing, evaluation and serving
//! from one binary. Exit status is 0 on success, 1 for invalid
//! configuration or inputs, 2 for failures while running.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deepmatch_core::Error;

#[derive(Parser, Debug)]
#[command(name = "deepmatch", version, about = "Query-to-entity recommendation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for inputs and outputs; relative input paths resolve here.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Config override, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a seeded synthetic corpus of logs, concepts and eval cases.
    Synth,
    /// Turn logs into weighted (query, entity) training pairs.
    BuildData,
    /// Count tokens and entities of the training pairs.
    BuildVocab {
        #[arg(long, default_value = commands::PAIRS_FILE)]
        pairs: PathBuf,
    },
    /// Train an encoder and the entity table.
    Train {
        #[arg(long, default_value = commands::PAIRS_FILE)]
        pairs: PathBuf,
    },
    /// Build the cosine index from a checkpoint's entity table.
    BuildIndex {
        #[arg(long, default_value = commands::MODEL_FILE)]
        checkpoint: PathBuf,
        #[arg(long, default_value = commands::INDEX_FILE)]
        index: PathBuf,
    },
    /// Precision@M of one or more (checkpoint, index) methods.
    Eval {
        /// `name=checkpoint,index`; repeatable. Defaults to the model and
        /// index in the output directory.
        #[arg(long = "method", value_name = "NAME=CKPT,INDEX")]
        methods: Vec<String>,
    },
    /// Run the HTTP recommendation service.
    Serve {
        #[arg(long, default_value = commands::MODEL_FILE)]
        checkpoint: PathBuf,
        #[arg(long, default_value = commands::INDEX_FILE)]
        index: PathBuf,
    },
    /// Nearest entities to an entity by embedding.
    Neighbors {
        #[arg(long)]
        entity: String,
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value = commands::INDEX_FILE)]
        index: PathBuf,
    },
    /// Per-token attention weights of an enhanced model.
    Attend {
        #[arg(long)]
        query: String,
        #[arg(long, default_value = commands::MODEL_FILE)]
        checkpoint: PathBuf,
    },
}

/// Configuration and input problems exit 1; everything else exits 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::ConfigInvalid(_)
            | Error::InputMissing(_)
            | Error::Parse { .. }
            | Error::DuplicateRulePattern(_)
            | Error::MZero
            | Error::MethodIndexMismatch { .. }
            | Error::IndexMismatch { .. }
            | Error::UnknownEntity(_)
            | Error::EmptyQuery(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `gteforge` command-line driver.
//!
//! Exit codes: 0 on success, 2 for configuration or validation errors,
//! 3 for runtime and data errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<gteforge::Error> for CliError {
    fn from(e: gteforge::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "gteforge",
    version,
    about = "Train and evaluate contrastive text embedders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config value, e.g. `--set pretrain.total_steps=20`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Build the vocabulary file from the configured data sources.
    BuildVocab(ConfigArgs),
    /// Run the unsupervised pair stage from random initialisation.
    Pretrain(ConfigArgs),
    /// Run the supervised triple stage from a checkpoint.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Starting checkpoint; overrides `finetune.checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Embed `{"id", "text"}` JSONL records with a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        max_seq_len: Option<usize>,
    },
    /// Run the configured evaluation tasks and write a report.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, conflicts_with = "embeddings")]
        checkpoint: Option<PathBuf>,
        /// Precomputed embedding file; needs `--texts` to map texts to ids.
        #[arg(long, requires = "texts")]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        texts: Option<PathBuf>,
        /// Report path; defaults to `<output_dir>/report.json`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print a saved evaluation report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildVocab(cfg) => commands::build_vocab(&cfg),
        Command::Pretrain(cfg) => commands::pretrain(&cfg),
        Command::Finetune { cfg, checkpoint } => commands::finetune(&cfg, checkpoint),
        Command::Embed {
            checkpoint,
            input,
            output,
            max_seq_len,
        } => commands::embed(&checkpoint, &input, &output, max_seq_len),
        Command::Evaluate {
            cfg,
            checkpoint,
            embeddings,
            texts,
            output,
        } => commands::evaluate(&cfg, checkpoint, embeddings, texts, output),
        Command::Report { input, format } => commands::report(&input, format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}

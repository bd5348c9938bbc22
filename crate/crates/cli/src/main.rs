//! Command-line entry point for the counterfactual fairness pipeline.
//!
//! Each subcommand runs one stage against a shared run directory;
//! `pipeline` chains them all. Configuration comes from defaults, an
//! optional flat JSON file, and flags, in rising precedence. Exit codes:
//! 0 success, 2 configuration error, 3 runtime failure, 4 missing
//! upstream artifact.

mod artifacts;
mod config;
mod stages;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Overrides, RunConfig};

/// Failures surfaced to the shell, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or arguments (exit 2).
    Config(String),
    /// A stage failed while running (exit 3).
    Runtime(String),
    /// An input artifact from an earlier stage is absent (exit 4).
    MissingArtifact { path: PathBuf },
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Runtime(msg) => write!(f, "error: {msg}"),
            CliError::MissingArtifact { path } => write!(
                f,
                "missing artifact {}: run the stage that produces it first",
                path.display()
            ),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::MissingArtifact { .. } => 4,
        }
    }
}

#[derive(Parser)]
#[command(name = "cfad", about = "Counterfactually fair anomaly detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat JSON config file with dotted keys, e.g. {"phase2.lambda_fair": 2.0}.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed for every random stream.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Run directory for artifacts (default: $CFAD_OUT or ./runs).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Repeat the pipeline for seeds 0..N and aggregate the reports.
    #[arg(long, global = true, value_name = "N")]
    runs: Option<u32>,

    /// Skip adversarial fine-tuning (plain autoencoder baseline).
    #[arg(long, global = true)]
    no_finetune: bool,

    /// Headline threshold quantile.
    #[arg(long, global = true, value_name = "Q")]
    quantile: Option<f64>,

    /// Comma-separated quantile ladder for the trade-off sweep.
    #[arg(long, global = true, value_name = "Q,Q,...", value_delimiter = ',')]
    sweep: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark with ground-truth counterfactuals.
    Synth,
    /// Learn the structural causal model from the training split.
    Discover,
    /// Generate counterfactuals from the learned model.
    Cf,
    /// Pretrain the detector and fine-tune it for score invariance.
    Train,
    /// Score the test split and write the evaluation report.
    Eval,
    /// Run every stage in order; repeats per seed when --runs exceeds 1.
    Pipeline,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        runs: cli.runs,
        no_finetune: cli.no_finetune,
        quantile: cli.quantile,
        sweep: cli.sweep.clone(),
    };
    let config = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    if config.runs > 1 && !matches!(cli.command, Command::Pipeline) {
        return Err(CliError::Config(
            "--runs above 1 only applies to the pipeline command".to_string(),
        ));
    }
    match cli.command {
        Command::Synth => stages::cmd_synth(&config),
        Command::Discover => stages::cmd_discover(&config),
        Command::Cf => stages::cmd_cf(&config),
        Command::Train => stages::cmd_train(&config),
        Command::Eval => stages::cmd_eval(&config),
        Command::Pipeline => stages::cmd_pipeline(&config),
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("{error}");
            ExitCode::from(error.exit_code())
        }
    }
}

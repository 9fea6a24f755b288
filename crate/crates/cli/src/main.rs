//! Experiment front-end: config-driven training runs, comparison sweeps,
//! checkpoint analysis, and gradient checking.
//!
//! Exit codes: 0 success, 2 config error, 3 training collapse (non-finite
//! loss), 4 I/O error. Collapse gets its own code because it is an
//! experimental outcome worth distinguishing, not a tooling failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Other(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Io(msg) => write!(f, "i/o error: {msg}"),
            CliError::Other(msg) => write!(f, "{msg}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<specnorm::training::TrainError> for CliError {
    fn from(e: specnorm::training::TrainError) -> Self {
        use specnorm::training::TrainError;
        match e {
            TrainError::InvalidConfig(msg) => CliError::Config(msg),
            TrainError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<specnorm::net::NetError> for CliError {
    fn from(e: specnorm::net::NetError) -> Self {
        use specnorm::net::NetError;
        match e {
            NetError::Io(io) => CliError::Io(io.to_string()),
            NetError::BadCheckpoint(msg) => CliError::Io(msg),
            other => CliError::Other(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "specnorm", version, about = "Lipschitz-controlled GAN training experiments at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one GAN from a config file, emitting metrics, checkpoints and
    /// a manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output root; the run writes into <out>/<run-id>/.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the metric cadence (generator updates per record).
        #[arg(long)]
        cadence: Option<usize>,
    },
    /// Run the [sweep] matrix of normalizers × settings × seeds and emit an
    /// aggregate comparison table.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel worker count (defaults to parallel_runs in the config).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        cadence: Option<usize>,
    },
    /// Singular spectra, Lipschitz bound and empirical Lipschitz estimate of
    /// a run checkpoint's discriminator.
    Analyze {
        checkpoint: PathBuf,
        /// Where to write spectrum.csv / analysis.json (defaults to the
        /// checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the empirical Lipschitz sample pairs.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of sample pairs.
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
    },
    /// Finite-difference verification of the backward pass for every
    /// normalizer kind.
    Gradcheck {
        /// Optional config supplying the architecture to check.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Negative-control hook: corrupt the loss gradient so the check
        /// must fail.
        #[arg(long, hide = true)]
        corrupt_gradients: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out, cadence } => commands::run::execute(&config, seed, out, cadence),
        Command::Sweep { config, out, jobs, cadence } => commands::sweep::execute(&config, out, jobs, cadence),
        Command::Analyze { checkpoint, out, seed, pairs } => commands::analyze::execute(&checkpoint, out, seed, pairs),
        Command::Gradcheck { config, tolerance, corrupt_gradients } => {
            commands::gradcheck::execute(config.as_deref(), tolerance, corrupt_gradients)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("specnorm: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

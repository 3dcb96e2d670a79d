//! Experiment runner behind the `mocha` binary.
//!
//! Every command takes one config file (see [`config`]), optionally
//! overridden by `--seed` and `--out`, and echoes the effective config into
//! the output directory as `config.toml`.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "mocha", version, about = "Federated multi-task learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic federation as task_<k>.csv files.
    Generate(RunArgs),
    /// Run the configured method and write its trace and final model.
    Train(RunArgs),
    /// Held-out error of local, global and multi-task models.
    Compare(RunArgs),
    /// Time-to-suboptimality curves per method, network preset and heterogeneity mode.
    Bench(RunArgs),
    /// MOCHA traces under a grid of node drop probabilities.
    Fault(RunArgs),
    /// Convergence constants and iteration bounds as JSON.
    Theory(RunArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<mocha_core::Error> for CliError {
    fn from(e: mocha_core::Error) -> Self {
        match e {
            mocha_core::Error::Config(msg) => CliError::Config(ConfigError::new("", msg)),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Runs one command; stdout gets the human-readable summary.
pub fn run(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Compare(a) => commands::compare(a),
        Command::Bench(a) => commands::bench(a),
        Command::Fault(a) => commands::fault(a),
        Command::Theory(a) => commands::theory(a),
    }
}

//! `symrom` command-line front end.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use symrom::ode::Method;

use crate::commands::Context;
use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] symrom::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: config error at byte {offset}: {message}")]
    Config {
        path: PathBuf,
        offset: usize,
        message: String,
    },
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::Usage(_) => "E_USAGE",
            CliError::Io { .. } => "E_IO",
            CliError::Config { .. } => "E_CONFIG",
        }
    }
}

/// Options shared by every subcommand. Each one overrides the config key
/// of the same name.
#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Output directory; defaults to `$SYMROM_OUT/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `training.seed` (also the synthetic seed for `gen`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `training.latent_dim`
    #[arg(long, global = true)]
    pub latent_dim: Option<usize>,
    /// `training.sindy.threshold`
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    /// `rollout.reset_interval`; 0 disables resets.
    #[arg(long, global = true)]
    pub reset_interval: Option<usize>,
    /// `rollout.integrator.method`: adaptive or fixed_rk4.
    #[arg(long, global = true)]
    pub integrator: Option<Method>,
    /// Run independent jobs on all cores.
    #[arg(long, global = true)]
    pub parallel: bool,
    #[arg(long = "out-root", env = "SYMROM_OUT", global = true, hide = true)]
    pub out_root: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known latent dynamics.
    Gen {
        /// two-phase or froggy; ignored when the config has a [synthetic] table.
        #[arg(long, default_value = "two-phase")]
        preset: String,
    },
    /// Train a model on a dataset.
    Train,
    /// Score latent dimensions over several seeds.
    Scan {
        /// Comma-separated latent dimensions (`scan.l_values`).
        #[arg(long, value_delimiter = ',')]
        l_values: Vec<usize>,
        /// Comma-separated seeds (`scan.seeds`).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Roll a model out on the test jumps of a dataset.
    Eval,
    /// Compare the aSLIP baseline (and optionally a model) on test jumps.
    Baseline,
    /// Continue training a model on a new dataset.
    Finetune,
}

#[derive(Debug, Parser)]
#[command(name = "symrom", version, about = "Symbolic reduced-order models of legged jumping")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = Context {
        config: RunConfig::resolve(&cli.common)?,
        config_path: cli.common.config.clone(),
        out_root: cli.common.out_root.clone(),
    };
    match &cli.command {
        Command::Gen { preset } => commands::gen(&ctx, preset),
        Command::Train => commands::train(&ctx),
        Command::Scan { l_values, seeds } => commands::scan(&ctx, l_values, seeds),
        Command::Eval => commands::eval(&ctx),
        Command::Baseline => commands::baseline(&ctx),
        Command::Finetune => commands::finetune(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.code());
            ExitCode::FAILURE
        }
    }
}

//! `stabreg`: data generation, ES-CV selection, regime solving and Monte
//! Carlo checks from the command line.
//!
//! Every run writes its resolved configuration to `<out>/config.json`;
//! passing that file back with `--config` reproduces the run.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{GenFlags, McFlags, RegimeFlags, SelectFlags};

#[derive(Parser)]
#[command(name = "stabreg", version, about)]
struct Cli {
    /// Worker threads for folds and replicates (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a linear-model dataset.
    Gen {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: GenFlags,
    },
    /// Choose the Lasso penalty by ES-CV and by CV.
    Select {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: SelectFlags,
    },
    /// Solve the asymptotic system for r(κ), or locate the LAD/OLS crossover.
    Regime {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: RegimeFlags,
    },
    /// Simulate ‖β̂‖ under the null model and compare with theory.
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: McFlags,
    },
}

/// Failure classes, mapped onto exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<stabreg::Error> for CliError {
    fn from(e: stabreg::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Gen { common, flags } => {
            let cfg = config::resolve_gen(common.config.as_deref(), flags)?;
            commands::gen(&cfg, &common.out)
        }
        Command::Select { common, flags } => {
            let cfg = config::resolve_select(common.config.as_deref(), flags)?;
            commands::select(&cfg, &common.out)
        }
        Command::Regime { common, flags } => {
            let cfg = config::resolve_regime(common.config.as_deref(), flags)?;
            commands::regime(&cfg, &common.out)
        }
        Command::Mc { common, flags } => {
            let cfg = config::resolve_mc(common.config.as_deref(), flags)?;
            commands::mc(&cfg, &common.out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stabreg: {e}");
            ExitCode::from(e.code())
        }
    }
}

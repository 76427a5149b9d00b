//! Command-line front end: loads an experiment configuration, runs attack
//! synthesis, analytic cost analysis or Monte-Carlo comparisons, and writes
//! CSV and JSON result files.

pub mod commands;
pub mod config;
pub mod output;

use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, Experiment, ExperimentConfig};

/// Non-finite or otherwise unusable numerical output; maps to exit code 3.
#[derive(Debug)]
pub struct NumericalError(pub String);

impl fmt::Display for NumericalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "numerical failure: {}", self.0)
    }
}

impl std::error::Error for NumericalError {}

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const INFEASIBLE: i32 = 4;
}

#[derive(Debug, Parser)]
#[command(name = "packetdos", version, about = "Attacks on packet-loss statistics of networked controllers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `output.directory` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal IID mean and non-stationary schedule at the initial-state mean.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-loop Monte-Carlo run of the configured attack.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Closed-form expected cost increase for each attack regime.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Also estimate each increase with this many paired horizon runs.
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte-Carlo comparison of several attacks on common random numbers.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: none, iid, nonstat, all_drop, all_deliver, fixed.
        #[arg(long, default_value = "none,iid,nonstat")]
        attacks: String,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Runs one command and returns the files it wrote.
pub fn run(cli: Cli) -> anyhow::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Synthesize { common } => commands::synthesize(&common.config, common.out.as_deref()),
        Command::Simulate {
            common,
            realizations,
            seed,
        } => commands::simulate(&common.config, common.out.as_deref(), realizations, seed),
        Command::Analyze {
            common,
            realizations,
            seed,
        } => commands::analyze(&common.config, common.out.as_deref(), realizations, seed),
        Command::Compare {
            common,
            attacks,
            realizations,
            seed,
        } => commands::compare(&common.config, common.out.as_deref(), &attacks, realizations, seed),
    }
}

/// Process exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use packetdos_core::Error;
    if err.downcast_ref::<ConfigError>().is_some() {
        return exit::CONFIG;
    }
    if err.downcast_ref::<NumericalError>().is_some() {
        return exit::NUMERICAL;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::InfeasibleAttack(_)) => exit::INFEASIBLE,
        Some(Error::Dimension { .. } | Error::InvalidParameter { .. }) => exit::CONFIG,
        Some(_) => exit::NUMERICAL,
        None => exit::OTHER,
    }
}

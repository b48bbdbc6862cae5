//! `logsparse`: solve, analyze, simulate, locate and sweep from the command line.
//!
//! Exit codes: 0 ok, 2 parse or invalid input, 3 dimension mismatch, 4 infeasible,
//! 5 internal.

mod commands;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{file}{}: {msg}", line.map(|l| format!(":{l}")).unwrap_or_default())]
    Parse {
        file: String,
        line: Option<usize>,
        msg: String,
    },
    #[error(transparent)]
    Core(#[from] logsparse::Error),
    #[error("{0}")]
    Infeasible(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use logsparse::Error as E;
        match self {
            CliError::Parse { .. } => 2,
            CliError::Core(e) => match e {
                E::InvalidParams(_) | E::OutOfRange(_) => 2,
                E::DimensionMismatch { .. } | E::LengthMismatch(..) | E::CountMismatch(..) => 3,
                E::Infeasible { .. } | E::EmptySupport { .. } => 4,
                _ => 5,
            },
            CliError::Infeasible(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "logsparse",
    version,
    about = "Logarithmic-surrogate sparse recovery and TDOA localization"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Random seed (default 0; overrides the seed of a sweep spec).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Surrogate parameter p.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Surrogate exponent q.
    #[arg(long, global = true)]
    pub q: Option<f64>,
    /// Solver iteration cap.
    #[arg(long, global = true)]
    pub max_iters: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Equality,
    Constrained,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve `min ||x||_h` subject to `Ax = b` (or the thresholded constrained model).
    Solve {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        rhs: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Equality)]
        mode: Mode,
        /// Residual bound for the constrained mode.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Box bound for the constrained mode.
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        va_low: Option<f64>,
        #[arg(long)]
        va_high: Option<f64>,
    },
    /// Coherence, RIP and null-space constants of a matrix.
    Analyze {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        k: usize,
        /// Also compute the RIP constant by enumeration.
        #[arg(long)]
        rip: bool,
        /// Random null-space samples per estimate.
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Simulate a delay table for a scene.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        /// Measure delays from simulated signals instead of perturbing true delays.
        #[arg(long)]
        signal: bool,
    },
    /// Locate targets from a delay table.
    Locate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        delays: PathBuf,
        /// Locator settings (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Target count; defaults to the config value, then the scene's target count.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Monte Carlo sweep over target count, receiver count and noise.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(5);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

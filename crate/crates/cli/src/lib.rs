//! Command-line runner: `solve`, `spectrum`, `poincare`, `converge`, `optimize`, `check`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use roughbvp::Error;

pub use config::{LoadedConfig, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    Numerical(String),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::CheckFailed(m) => write!(f, "check failed: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::SingularSystem(_)
            | Error::NotConverged { .. }
            | Error::ConvergenceFailure { .. }
            | Error::Factorization(_)
            | Error::NotASolution { .. }
            | Error::NoAdmissibleCandidate
            | Error::TooFewCandidates { .. }
            | Error::IntervalCutsEigenvalue { .. }
            | Error::InsufficientCount { .. }
            | Error::DegenerateConstraint
            | Error::ConstraintKillsEverything
            | Error::IncompatibleNeumann { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("write failed: {e}"))
    }
}

#[derive(Debug, Parser)]
#[command(name = "roughbvp", version, about = "Boundary value problems on rough pixel domains")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed; overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Weak solution on the configured domain.
    Solve,
    /// Lowest eigenpairs.
    Spectrum {
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Poincaré constant and norm-equivalence constants.
    Poincare,
    /// Convergence experiment along a notch or Koch family.
    Converge {
        experiment: Experiment,
        #[arg(long, default_value_t = 3)]
        count: usize,
    },
    /// Exhaustive shape search.
    Optimize,
    /// Dirichlet benchmark against the Fourier oracle.
    Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Stability,
    Spectral,
}

/// Parses `argv` (program name first), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut loaded = LoadedConfig::load(path)?;
    if let Some(seed) = cli.seed {
        loaded.config.seed = seed;
    }
    if let Some(out) = &cli.out {
        loaded.config.out_dir = out.clone();
    }
    let work = || commands::dispatch(&cli.command, &loaded);
    match cli.threads {
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

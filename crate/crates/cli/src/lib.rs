//! Command-line front end: configuration, orchestration and result files.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mlqmc_core::{Driver, Error};

use config::{Overrides, RunConfig};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success = 0,
    Io = 1,
    Config = 2,
    Estimator = 3,
    Verify = 4,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn status(&self) -> Status {
        match self {
            CliError::Core(Error::Config(_) | Error::Argument(_) | Error::Domain(_)) => Status::Config,
            CliError::Core(_) => Status::Estimator,
            CliError::Io(_) => Status::Io,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mlqmc", version, about = "Multilevel and multi-index (Q)MC estimators for an elliptic PDE with random coefficients")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Common {
    /// TOML run configuration
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub driver: Option<Driver>,
    /// Comma-separated accuracy list
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Spatial dimension d
    #[arg(long)]
    pub dim: Option<usize>,
    /// Stochastic dimension s
    #[arg(long)]
    pub sdim: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lattice_file: Option<PathBuf>,
    /// Worker threads (default: machine parallelism)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pilot phase only: per-term statistics and fitted rates
    Screen(Common),
    /// Pilot plus one estimator run per eps
    Run(Common),
    /// Identity suites and statistical unbiasedness checks
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Re-fit rates from a saved CSV table
    Rates {
        table: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

impl Common {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            driver: self.driver,
            eps: self.eps.clone(),
            seed: self.seed,
            dim: self.dim,
            sdim: self.sdim,
            out: self.out.clone(),
            lattice_file: self.lattice_file.clone(),
            threads: self.threads,
        });
        Ok(cfg)
    }
}

fn dispatch(cmd: &Command, cfg: &RunConfig) -> CliResult<commands::Outcome> {
    match cmd {
        Command::Screen(_) => commands::screen(cfg),
        Command::Run(_) => commands::run(cfg),
        Command::Verify { inject_fault, .. } => commands::verify(cfg, *inject_fault),
        Command::Rates { table, .. } => commands::rates(cfg, table),
    }
}

/// Runs one command and returns the exit status; the summary goes to
/// stdout and errors to stderr.
pub fn execute(cli: &Cli) -> Status {
    let common = match &cli.command {
        Command::Screen(c) | Command::Run(c) => c,
        Command::Verify { common, .. } | Command::Rates { common, .. } => common,
    };
    let cfg = match common.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.status();
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return Status::Io;
        }
    };
    let start = Instant::now();
    let result = pool.install(|| dispatch(&cli.command, &cfg));
    let elapsed = start.elapsed();
    match result {
        Ok(out) => {
            print!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            println!("elapsed {:.3} s on {} threads", elapsed.as_secs_f64(), pool.current_num_threads());
            if out.status != Status::Success {
                eprintln!("error: command finished with status {}", out.status as i32);
            }
            out.status
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.status()
        }
    }
}

//! `nearfield`: simulate, verify, synthesize and recover from the command line.
//!
//! Exit codes: 0 pass, 1 usage or parse error, 2 validation failure,
//! 3 numerical failure.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand};
use nearfield_core::NearFieldError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "nearfield", version, about = "Near-field potential scattering workbench")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Output directory.
    #[arg(long, global = true, default_value = "nearfield-out")]
    pub out: PathBuf,
    /// Tolerance of the factorization check.
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub tol: f64,
    /// Override the harmonic truncation of the scene.
    #[arg(long, global = true)]
    pub lmax: Option<usize>,
    /// Seed for random densities.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Suppress human-readable output.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Print the machine-readable report on stdout.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute F_S by both paths and compare them.
    Simulate { scene: PathBuf },
    /// Run the invariant suite and print a pass/fail table.
    Verify { scene: PathBuf },
    /// Emit the regularization path of the source synthesis as CSV.
    Synthesize {
        scene: PathBuf,
        /// JSON file `{"values": [[re, im], ...]}` over the S nodes (random if absent).
        #[arg(long)]
        phi: Option<PathBuf>,
        /// Number of Tikhonov steps `α = 10^-1 .. 10^-steps`.
        #[arg(long, default_value_t = 24)]
        steps: usize,
    },
    /// Recover F_n from a near-field matrix and fit a potential template.
    Recover {
        scene: PathBuf,
        /// Near-field matrix JSON written by `simulate`.
        #[arg(long)]
        nearfield: PathBuf,
        /// Shells as `value@radius`, comma separated; `radius!` pins a breakpoint.
        #[arg(long)]
        template: String,
        /// Highest trusted degree.
        #[arg(long, default_value_t = 8)]
        lrec: usize,
        /// Relative block-norm cutoff.
        #[arg(long, default_value_t = 1e-10)]
        tau: f64,
    },
}

/// Failure of a command with its exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Validation(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<NearFieldError> for Failure {
    fn from(e: NearFieldError) -> Self {
        let msg = e.to_string();
        match e {
            NearFieldError::Parse(_)
            | NearFieldError::Config(_)
            | NearFieldError::Io(_)
            | NearFieldError::Json(_)
            | NearFieldError::Index { .. } => Failure::Usage(msg),
            NearFieldError::Geometry(_) | NearFieldError::Pole { .. } | NearFieldError::Domain(_) => {
                Failure::Validation(msg)
            }
            NearFieldError::Invertibility { .. }
            | NearFieldError::Rank { .. }
            | NearFieldError::Degenerate { .. }
            | NearFieldError::NonConvergence { .. }
            | NearFieldError::Bounds { .. }
            | NearFieldError::Dimension(_) => Failure::Numerical(msg),
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("NEARFIELD_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // only fails if a pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

//! `qkdrate`: key-rate sweeps, data-driven rates, quadrature rules and bases.

mod commands;
mod grid;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "qkdrate", version, about = "Lower bounds on QKD key rates from a moment-matrix SDP")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Rates for a protocol over a visibility grid.
    Rate {
        #[command(subcommand)]
        protocol: Protocol,
        #[command(flatten)]
        run: RunArgs,
        /// visibility `v` or grid `lo:hi:step` (endpoints inclusive)
        #[arg(long, global = true)]
        v: Option<String>,
        /// append the analytic rate as an extra CSV column
        #[arg(long, global = true)]
        analytic: bool,
    },
    /// Rate from measured counts via a calibrated credible region.
    Data {
        #[command(subcommand)]
        protocol: Protocol,
        #[command(flatten)]
        run: RunArgs,
        /// counts JSON; operator indices refer to the expanded protocol
        #[arg(long, global = true)]
        counts: Option<PathBuf>,
        #[arg(long, global = true, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, global = true, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, global = true, default_value_t = 1)]
        seed: u64,
    },
    /// Counts drawn from the isotropic state, as JSON.
    Simulate {
        #[command(subcommand)]
        protocol: Protocol,
        #[arg(long, global = true)]
        v: Option<f64>,
        /// rounds per measurement setting
        #[arg(long, global = true, default_value_t = 10_000)]
        n: u64,
        #[arg(long, global = true, default_value_t = 1)]
        seed: u64,
        #[arg(long, short, global = true)]
        output: Option<PathBuf>,
    },
    /// Gauss-Radau rule on [0, 1] as JSON.
    Quadrature {
        #[arg(long)]
        m: usize,
    },
    /// Approximate mutually unbiased bases by gradient descent.
    Mubgen {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug, Clone)]
pub enum Protocol {
    /// All d+1 mutually unbiased bases, computational key basis.
    Mub {
        #[arg(long)]
        d: usize,
        /// constrain only agreement-offset probabilities
        #[arg(long)]
        coarse: bool,
        /// basis set JSON (as written by `mubgen`) instead of the exact construction
        #[arg(long)]
        bases: Option<PathBuf>,
    },
    /// MUB protocol inside k-dimensional blocks of a d-dimensional system.
    Subspace {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
    },
    /// Computational, Fourier and real overlap bases.
    Overlap {
        #[arg(long)]
        d: usize,
        /// overlap bases to measure, indices in 0..5
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        which: Vec<usize>,
        /// constrain only the probability of equal outcomes per basis
        #[arg(long)]
        equal_outcomes: bool,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// quadrature order
    #[arg(long, global = true, default_value_t = 8)]
    pub m: usize,
    #[arg(long, global = true, value_enum, default_value_t = SymmetryArg::None)]
    pub symmetry: SymmetryArg,
    /// skip the strict-feasibility check and facial reduction
    #[arg(long, global = true)]
    pub no_facial_reduction: bool,
    /// keep complex variables even when every operator is real
    #[arg(long, global = true)]
    pub no_real: bool,
    /// sum separately minimized quadrature terms (a weaker bound)
    #[arg(long, global = true)]
    pub split: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymmetryArg {
    None,
    /// `a -> a+1 mod d` on Alice, transposed shift on Bob
    Cyclic,
    /// `a -> d-1-a`
    Reversal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                eprintln!("error[usage]: a subcommand is required; see --help");
                return ExitCode::from(2);
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind, e.message.replace('\n', " "));
            ExitCode::from(e.code)
        }
    }
}

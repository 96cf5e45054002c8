mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use output::Format;

/// Stabilizer-type GHZ Bell inequalities and device-independent randomness.
#[derive(Debug, Parser)]
#[command(name = "ghzrand", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Artifact format (default depends on the command).
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Write the artifact here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverChoice {
    Ipm,
    Admm,
    /// Program named by GHZRAND_SDP_SOLVER.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ConstraintChoice {
    Equal,
    AtLeast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RateChoice {
    Npa,
    ClosedForm,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classical and quantum bounds with cross-checks.
    Bounds {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        alpha: f64,
        /// Restarts for the angle search.
        #[arg(long, default_value_t = 20)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Min-entropy report at the optimal realization.
    Certify {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        alpha: f64,
        /// Setting bits of the certified tuple, e.g. 000.
        #[arg(long)]
        target: Option<String>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Holevo-quantity bound against the Bell value.
    HolevoCurve {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Conditional-entropy curves of four Bell tests on a shared axis.
    CompareFig4 {
        #[arg(long, default_value_t = 50)]
        points: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Moment-relaxation guessing bounds over a grid of Bell values.
    Robustness {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 2)]
        level: usize,
        /// `lo:hi:count` or a comma-separated list; defaults to 10 points
        /// from the classical to the quantum bound.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        target: Option<String>,
        /// Certify outcomes of one party instead of the whole tuple.
        #[arg(long)]
        party: Option<usize>,
        #[arg(long, value_enum, default_value_t = ConstraintChoice::Equal)]
        constraint: ConstraintChoice,
        #[arg(long, value_enum, default_value_t = SolverChoice::Ipm)]
        solver: SolverChoice,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Isometry checks on random block-structured realizations.
    Selftest {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Maximum number of blocks per draw.
        #[arg(long, default_value_t = 4)]
        blocks: usize,
        #[arg(long, default_value_t = 10)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sample noisy trials, certify a rate and extract bits.
    Simulate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        visibility: f64,
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weight of the certified tuple relative to the other inputs.
        #[arg(long, default_value_t = 1.0)]
        oversample: f64,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_enum, default_value_t = RateChoice::Npa)]
        rate: RateChoice,
        #[arg(long, default_value_t = 2)]
        level: usize,
        /// Line-delimited trial records.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Raw outcome bits (packed, LSB first).
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Extracted bits (packed, LSB first).
        #[arg(long)]
        bits: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Error carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub const CROSS_CHECK: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const SOLVER: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            message: message.into(),
        }
    }

    pub fn cross_check(message: impl Into<String>) -> Self {
        Self {
            code: Self::CROSS_CHECK,
            message: message.into(),
        }
    }
}

impl From<ghzrand::Error> for Failure {
    fn from(e: ghzrand::Error) -> Self {
        use ghzrand::Error as E;
        let code = match e {
            E::MaxIterations { .. } | E::Infeasible(_) | E::Unsupported(_) => Self::SOLVER,
            E::NoViolation { .. } | E::OutputTooShort(_) => Self::CROSS_CHECK,
            _ => Self::USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { Failure::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

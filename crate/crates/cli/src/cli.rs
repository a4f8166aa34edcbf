use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::options::parse_grid;
use crate::problem::GridEntry;

/// Robust stability analysis of positive systems via mu of nonnegative matrices.
#[derive(Debug, Parser)]
#[command(name = "posmu", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Bisection tolerance for mu.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Allowed gap between the upper and lower bound, relative to max(1, mu).
    #[arg(long, global = true)]
    pub gap_tol: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dyad-ascent restarts for the lower bound.
    #[arg(long, global = true)]
    pub restarts: Option<usize>,
    /// Cutting-plane iterations per feasibility problem.
    #[arg(long, global = true)]
    pub max_iter: Option<usize>,
    /// Frequency grid as lo:hi:count (rad/s).
    #[arg(long, global = true, value_parser = parse_grid)]
    pub grid: Option<GridEntry>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Also write the JSON report to this file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    #[default]
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// mu of a nonnegative matrix with bounds and certificates.
    Mu { file: PathBuf },
    /// Show the reduced structure used for nonnegative data.
    Reduce { file: PathBuf },
    /// Positive dominance and external positivity of a system.
    Dominance {
        file: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
    },
    /// Robust stability of a system or static matrix.
    Robust {
        file: PathBuf,
        /// Skip the dominance check (the system is known to be positively dominated).
        #[arg(long)]
        assume_dominance: bool,
    },
    /// Upper bound of mu along a frequency grid.
    Sweep { file: PathBuf },
    /// Foschini-Miljanic power control analyses.
    Fm {
        #[command(subcommand)]
        command: FmCommand,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct Sampling {
    /// Time horizon for sampled responses.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Time step for sampled responses.
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum FmCommand {
    /// Nominal feasibility and the fixed point.
    Check { file: PathBuf },
    /// Robust stability against the interference uncertainty.
    Robust { file: PathBuf },
    /// Integrate the power dynamics.
    Simulate {
        file: PathBuf,
        #[command(flatten)]
        sampling: Sampling,
        /// Simulate under the destabilizing boundary perturbation instead of the nominal gains.
        #[arg(long)]
        witness: bool,
        /// Write the trajectory as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Search random boundary perturbations for a destabilizer.
    Falsify {
        file: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Compare the robust test with and without the file's delays.
    Delays { file: PathBuf },
}

impl Command {
    pub fn name(&self) -> String {
        match self {
            Command::Mu { .. } => "mu".into(),
            Command::Reduce { .. } => "reduce".into(),
            Command::Dominance { .. } => "dominance".into(),
            Command::Robust { .. } => "robust".into(),
            Command::Sweep { .. } => "sweep".into(),
            Command::Fm { command } => format!(
                "fm {}",
                match command {
                    FmCommand::Check { .. } => "check",
                    FmCommand::Robust { .. } => "robust",
                    FmCommand::Simulate { .. } => "simulate",
                    FmCommand::Falsify { .. } => "falsify",
                    FmCommand::Delays { .. } => "delays",
                }
            ),
        }
    }

    pub fn file(&self) -> &PathBuf {
        match self {
            Command::Mu { file }
            | Command::Reduce { file }
            | Command::Dominance { file, .. }
            | Command::Robust { file, .. }
            | Command::Sweep { file } => file,
            Command::Fm { command } => match command {
                FmCommand::Check { file }
                | FmCommand::Robust { file }
                | FmCommand::Simulate { file, .. }
                | FmCommand::Falsify { file, .. }
                | FmCommand::Delays { file } => file,
            },
        }
    }
}

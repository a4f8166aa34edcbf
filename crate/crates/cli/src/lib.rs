//! Batch front end for the `posmu` library: problem files in, reports out.

pub mod cli;
pub mod commands;
pub mod options;
pub mod problem;
pub mod report;

use std::io::Write;

use thiserror::Error;

pub use cli::{Cli, Command, FmCommand, Format, GlobalArgs};
pub use problem::ProblemFile;
pub use report::Report;

pub mod exit {
    /// Stable or robust verdict, or a plain computation.
    pub const OK: i32 = 0;
    /// Not robust, refuted, infeasible or diverged.
    pub const NEGATIVE: i32 = 1;
    pub const INPUT: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Core(#[from] posmu::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use posmu::Error as E;
        match self {
            CliError::Input(_) => exit::INPUT,
            CliError::Core(e) => match e {
                E::InvalidStructure(_)
                | E::DimensionMismatch(_)
                | E::InvalidInput(_)
                | E::Precondition(_)
                | E::DominanceRefuted { .. } => exit::INPUT,
                E::NotHurwitz { .. } => exit::NEGATIVE,
                E::SingularResolvent { .. } | E::Infeasible(_) | E::Unbounded(_) | E::Numerical(_) => {
                    exit::NUMERICAL
                }
            },
        }
    }
}

/// Loads the file, runs the command, prints the report and returns the exit code.
pub fn execute(cli: &Cli, stdout: &mut impl Write, stderr: &mut impl Write) -> i32 {
    let result = ProblemFile::load(cli.command.file()).and_then(|f| commands::run(&cli.command, &f, &cli.global));
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return e.exit_code();
        }
    };
    if let Some(path) = &cli.global.out {
        if let Err(e) = std::fs::write(path, report.to_json()) {
            let _ = writeln!(stderr, "error: {}: {e}", path.display());
            return exit::INPUT;
        }
    }
    let rendered = match cli.global.format {
        Format::Json => report.to_json(),
        Format::Text => report.to_text(),
    };
    let _ = stdout.write_all(rendered.as_bytes());
    report.exit_code
}

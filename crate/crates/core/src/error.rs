use thiserror::Error;

/// Errors raised by the analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid block structure: {0}")]
    InvalidStructure(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { abscissa: f64 },

    #[error("singular resolvent at omega = {omega}")]
    SingularResolvent { omega: f64 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("unbounded objective: {0}")]
    Unbounded(String),

    #[error("positive dominance refuted at omega = {omega}, entry ({row}, {col})")]
    DominanceRefuted { omega: f64, row: usize, col: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

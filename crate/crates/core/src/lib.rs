//! Structured singular value of nonnegative matrices and robust stability
//! analysis of positively dominated linear systems.
//!
//! * [`structure`]: block structures, their real-full reduction, structured
//!   perturbations and witness construction.
//! * [`mu_core`]: exact mu for nonnegative matrices with certificates.
//! * [`oracles`]: independent lower bounds and refutation searches.
//! * [`systems`]: frequency responses, positivity and dominance checks,
//!   robust stability verdicts.
//! * [`fm`]: the Foschini–Miljanic power control model.

pub mod error;
pub mod fm;
pub mod linalg;
pub mod mu_core;
pub mod oracles;
pub mod structure;
pub mod systems;

pub use error::{Error, Result};
pub use mu_core::{mu_nonneg, MuOptions, MuResult, NonnegMatrix};
pub use structure::{BlockKind, BlockSpec, BlockStructure, Field, ReducedStructure, StructuredPerturbation};

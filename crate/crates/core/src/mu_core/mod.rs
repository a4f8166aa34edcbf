//! Structured singular value of nonnegative matrices.
//!
//! For `M >= 0` the scaling upper bound
//! `inf_Theta sigma_max(Theta^{1/2} M Theta^{-1/2})` is exact. The infimum is
//! computed by bisection on `gamma` over `[rho(M), sigma_max(M)]`, each step
//! deciding strict feasibility of `M^T Theta M - gamma^2 Theta < 0` with the
//! cutting-plane engine in [`engine`]. The lower bound from the dyad ascent
//! in [`crate::oracles`] certifies the gap.

pub mod engine;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracles;
use crate::structure::{reduce_structure, BlockStructure, ReducedStructure, ScalingVector, StructuredPerturbation};

pub use engine::{Cut, EngineOptions};

/// Square matrix with finite, nonnegative entries.
#[derive(Debug, Clone, PartialEq)]
pub struct NonnegMatrix(DMatrix<f64>);

impl NonnegMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        linalg::require_square(&m, "M")?;
        linalg::require_finite(&m, "M")?;
        if let Some((idx, v)) = m.iter().enumerate().find(|(_, &v)| v < 0.0) {
            let (i, j) = (idx % m.nrows(), idx / m.nrows());
            return Err(Error::InvalidInput(format!("M[{i}][{j}] = {v} is negative")));
        }
        Ok(Self(m))
    }

    pub fn from_row_slice(n: usize, data: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, alpha: f64) -> Result<Self> {
        Self::new(&self.0 * alpha)
    }
}

impl AsRef<DMatrix<f64>> for NonnegMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Tolerances, budgets and seeds for the mu computation.
#[derive(Debug, Clone)]
pub struct MuOptions {
    /// Bisection tolerance (absolute below 1, relative above).
    pub tol: f64,
    /// Allowed certified gap, relative to `max(1, mu)`.
    pub gap_tol: f64,
    /// Dyad-ascent restarts for the lower bound.
    pub restarts: usize,
    /// Ascent sweeps per restart.
    pub ascent_iters: usize,
    pub seed: u64,
    pub engine: EngineOptions,
}

impl Default for MuOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            gap_tol: 1e-2,
            restarts: 20,
            ascent_iters: 200,
            seed: 0,
            engine: EngineOptions::default(),
        }
    }
}

/// Lower-bound certificate: `d` in the unit ball with `M d q = lb q`.
#[derive(Debug, Clone)]
pub struct Witness {
    pub perturbation: StructuredPerturbation,
    pub q: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct MuResult {
    pub mu: f64,
    pub lower: f64,
    pub theta_star: ScalingVector,
    pub witness: Option<Witness>,
    pub gap: f64,
    /// Bisection steps (feasibility problems solved).
    pub iterations: usize,
    /// Total cutting-plane iterations across the bisection.
    pub cut_iterations: usize,
    pub tolerance: f64,
    /// Some `theta_k / theta_1` sits at the edge of the search box: the
    /// infimum is approached but possibly not attained.
    pub theta_at_box_boundary: bool,
    pub structure: ReducedStructure,
}

/// Anything that determines a reduced structure.
pub trait AsReduced {
    fn to_reduced(&self) -> ReducedStructure;
}

impl AsReduced for ReducedStructure {
    fn to_reduced(&self) -> ReducedStructure {
        self.clone()
    }
}

impl AsReduced for BlockStructure {
    fn to_reduced(&self) -> ReducedStructure {
        reduce_structure(self)
    }
}

/// Spectral radius. Nonnegative matrices go through the Perron power
/// iteration, everything else through the Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    linalg::require_square(m, "matrix")?;
    linalg::require_finite(m, "matrix")?;
    if linalg::is_nonnegative(m) {
        Ok(linalg::perron_root(m))
    } else {
        Ok(linalg::spectral_radius_dense(m))
    }
}

/// `sigma_max(Theta^{1/2} M Theta^{-1/2})` with `Theta` expanded block-wise from `theta`.
pub fn scaled_norm(m: &NonnegMatrix, theta: &ScalingVector, s: &ReducedStructure) -> Result<f64> {
    s.check_dim(m.dim())?;
    if theta.len() != s.num_blocks() {
        return Err(Error::DimensionMismatch(format!(
            "{} scaling entries for {} blocks",
            theta.len(),
            s.num_blocks()
        )));
    }
    Ok(engine::ScalingProblem::new(m.matrix(), s.groups()).scaled_norm(theta.as_slice()))
}

#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible(ScalingVector),
    Infeasible(Vec<Cut>),
}

/// Decides whether some `Theta` makes `M^T Theta M - gamma^2 Theta` negative
/// definite (with margin `1e-9 (1 + |M|^2)`). `Infeasible` carries every
/// separating cut produced before the localization set collapsed.
pub fn feasibility_certificate(
    m: &NonnegMatrix,
    gamma: f64,
    s: &ReducedStructure,
    opts: &EngineOptions,
) -> Result<Feasibility> {
    s.check_dim(m.dim())?;
    let problem = engine::ScalingProblem::new(m.matrix(), s.groups());
    let run = problem.feasibility(gamma, opts, None)?;
    Ok(match run.outcome {
        engine::EngineOutcome::Feasible { theta, .. } => Feasibility::Feasible(ScalingVector::new(theta)?),
        engine::EngineOutcome::Infeasible { cuts } => Feasibility::Infeasible(cuts),
    })
}

#[derive(Debug, Clone)]
pub struct MuUpper {
    pub ub: f64,
    pub theta_star: ScalingVector,
    pub iterations: usize,
    pub cut_iterations: usize,
    pub at_box_boundary: bool,
}

/// Scaling upper bound by bisection over `[rho(M), sigma_max(M)]`.
pub fn mu_upper(m: &NonnegMatrix, s: &ReducedStructure, opts: &MuOptions) -> Result<MuUpper> {
    s.check_dim(m.dim())?;
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidInput(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let problem = engine::ScalingProblem::new(m.matrix(), s.groups());
    let lower = linalg::perron_root(m.matrix());
    let ub = problem.minimize(lower, opts.tol, &opts.engine)?;
    let bound = engine::THETA_MAX.ln() - 1e-6;
    let at_box_boundary = ub.theta.iter().any(|t| t.ln().abs() >= bound);
    Ok(MuUpper {
        ub: ub.value,
        theta_star: ScalingVector::new(ub.theta)?,
        iterations: ub.steps,
        cut_iterations: ub.cut_iterations,
        at_box_boundary,
    })
}

/// Structured singular value of `M >= 0` with both certificates.
///
/// `M` must be expressed in the canonical row order of the structure (see
/// [`BlockStructure::to_canonical`]).
pub fn mu_nonneg<S: AsReduced + ?Sized>(m: &NonnegMatrix, s: &S, opts: &MuOptions) -> Result<MuResult> {
    let reduced = s.to_reduced();
    reduced.check_dim(m.dim())?;

    if m.dim() == 1 {
        let value = m.matrix()[(0, 0)];
        let witness = (value > 0.0).then(|| Witness {
            perturbation: StructuredPerturbation::from_reduced(&reduced, vec![DMatrix::from_element(1, 1, 1.0)])
                .expect("1x1 block"),
            q: DVector::from_element(1, 1.0),
        });
        return Ok(MuResult {
            mu: value,
            lower: value,
            theta_star: ScalingVector::ones(1),
            witness,
            gap: 0.0,
            iterations: 0,
            cut_iterations: 0,
            tolerance: opts.tol,
            theta_at_box_boundary: false,
            structure: reduced,
        });
    }

    let upper = mu_upper(m, &reduced, opts)?;
    let allowed = |ub: f64| (opts.gap_tol * ub.max(1.0)).max(opts.tol * ub);

    let mut lower = oracles::mu_lower_dyad(m, &reduced, opts.restarts, opts.ascent_iters, opts.seed)?;
    if upper.ub - lower.lb > allowed(upper.ub) {
        // one harder pass before calling it a numerical problem
        let retry = oracles::mu_lower_dyad(
            m,
            &reduced,
            opts.restarts.max(1) * 5,
            opts.ascent_iters.max(1) * 5,
            opts.seed.wrapping_add(1),
        )?;
        if retry.lb > lower.lb {
            lower = retry;
        }
    }
    let gap = (upper.ub - lower.lb).max(0.0);
    if gap > allowed(upper.ub) {
        return Err(Error::Numerical(format!(
            "certified gap {gap:.3e} between upper bound {} and lower bound {} exceeds tolerance",
            upper.ub, lower.lb
        )));
    }
    let witness = (lower.lb > 0.0).then(|| {
        let d_real = lower.perturbation.assemble_real().expect("dyads are real");
        let loop_gain = m.matrix() * d_real;
        let q = linalg::perron_vector(&loop_gain, lower.lb);
        Witness { perturbation: lower.perturbation.clone(), q }
    });
    Ok(MuResult {
        mu: upper.ub,
        lower: lower.lb,
        theta_star: upper.theta_star,
        witness,
        gap,
        iterations: upper.iterations,
        cut_iterations: upper.cut_iterations,
        tolerance: opts.tol,
        theta_at_box_boundary: upper.at_box_boundary,
        structure: reduced,
    })
}

//! Cutting-plane search for block-diagonal scalings.
//!
//! The unknowns are `x_k = ln theta_k` for blocks `2..N` (`theta_1 = 1`, the
//! scaling set is a cone). In these coordinates the scaled norm
//! `f(x) = sigma_max(Theta^{1/2} M Theta^{-1/2})` is convex, and with
//! `(u, v)` a top singular pair of the scaled matrix its subgradient is
//! `df/dx_k = f/2 (|u_k|^2 - |v_k|^2)`, the block split of the eigenvector
//! of `M^T Theta M - gamma^2 Theta`. Every rejected candidate therefore gives
//! a valid deep cut for the sublevel set `{f < gamma}`, which is exactly the
//! set where the LMI is strictly feasible.
//!
//! The localization set is an ellipsoid (an interval when there is a single
//! free coordinate) inside the box `|x_k| <= ln(1e8)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Bounds on every `theta_k / theta_1`.
pub const THETA_MIN: f64 = 1e-8;
pub const THETA_MAX: f64 = 1e8;

#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Cutting-plane iterations allowed per feasibility problem.
    pub max_iter: usize,
    /// The localization set is declared empty once its size drops below this (log units).
    pub resolution: f64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { max_iter: 20_000, resolution: 1e-9 }
    }
}

/// One rejected candidate: the eigenvector `v` of the LMI at `theta` with
/// `v^T (M^T Theta M - gamma^2 Theta) v >= 0`. `coefficients[k]` is the
/// coefficient of `theta_k` in that quadratic form, so
/// `sum_k theta_k coefficients[k] < 0` is a linear necessary condition on any
/// feasible scaling.
#[derive(Debug, Clone)]
pub struct Cut {
    pub theta: Vec<f64>,
    pub vector: DVector<f64>,
    pub coefficients: Vec<f64>,
    pub lambda_max: f64,
}

#[derive(Debug, Clone)]
pub enum EngineOutcome {
    Feasible { theta: Vec<f64>, value: f64 },
    Infeasible { cuts: Vec<Cut> },
}

#[derive(Debug, Clone)]
pub struct FeasibilityRun {
    pub outcome: EngineOutcome,
    pub iterations: usize,
    /// Smallest scaled norm seen and its scaling.
    pub best: (f64, Vec<f64>),
}

/// Scaling problem for a real square matrix whose rows are partitioned into groups.
pub struct ScalingProblem<'a> {
    m: &'a DMatrix<f64>,
    groups: Vec<usize>,
    n_groups: usize,
    margin: f64,
}

impl<'a> ScalingProblem<'a> {
    pub fn new(m: &'a DMatrix<f64>, groups: Vec<usize>) -> Self {
        let n_groups = groups.iter().max().map_or(0, |g| g + 1);
        let norm = linalg::spectral_norm(m);
        Self { m, groups, n_groups, margin: 1e-9 * (1.0 + norm * norm) }
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    /// Strictness margin on `lambda_max` of the LMI.
    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn theta_from_log(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(1.0).chain(x.iter().map(|v| v.exp())).collect()
    }

    fn log_from_theta(&self, theta: &[f64]) -> Vec<f64> {
        theta[1..].iter().map(|t| (t / theta[0]).ln()).collect()
    }

    /// `Theta^{1/2} M Theta^{-1/2}`.
    pub fn scaled(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = self.m.nrows();
        DMatrix::from_fn(n, n, |i, j| {
            (theta[self.groups[i]] / theta[self.groups[j]]).sqrt() * self.m[(i, j)]
        })
    }

    pub fn scaled_norm(&self, theta: &[f64]) -> f64 {
        linalg::spectral_norm(&self.scaled(theta))
    }

    /// `M^T Theta M - gamma^2 Theta`.
    pub fn lmi(&self, theta: &[f64], gamma: f64) -> DMatrix<f64> {
        let n = self.m.nrows();
        let d = DVector::from_iterator(n, self.groups.iter().map(|&g| theta[g]));
        let mut out = self.m.transpose() * DMatrix::from_diagonal(&d) * self.m;
        for i in 0..n {
            out[(i, i)] -= gamma * gamma * d[i];
        }
        out
    }

    /// Strict feasibility of the LMI, checked on `theta` normalized to unit maximum.
    fn check(&self, theta: &[f64], gamma: f64) -> (bool, f64, DVector<f64>) {
        let top = theta.iter().cloned().fold(0.0, f64::max);
        let normalized: Vec<f64> = theta.iter().map(|t| t / top).collect();
        let (lambda, v) = linalg::sym_max_eig(&self.lmi(&normalized, gamma));
        (lambda <= -self.margin, lambda, v)
    }

    fn cut_record(&self, theta: &[f64], gamma: f64, lambda: f64, v: DVector<f64>) -> Cut {
        let mv = self.m * &v;
        let mut coefficients = vec![0.0; self.n_groups];
        for (i, &g) in self.groups.iter().enumerate() {
            coefficients[g] += mv[i] * mv[i] - gamma * gamma * v[i] * v[i];
        }
        Cut { theta: theta.to_vec(), vector: v, coefficients, lambda_max: lambda }
    }

    /// Scaled norm and its subgradient with respect to the free log coordinates.
    fn value_and_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (sigma, u, v) = linalg::top_singular_pair(&self.scaled(theta));
        let mut g = vec![0.0; self.n_groups];
        for (i, &k) in self.groups.iter().enumerate() {
            g[k] += 0.5 * sigma * (u[i] * u[i] - v[i] * v[i]);
        }
        (sigma, g[1..].to_vec())
    }

    /// Searches for `theta` with `M^T Theta M - gamma^2 Theta` negative definite.
    pub fn feasibility(&self, gamma: f64, opts: &EngineOptions, warm: Option<&[f64]>) -> Result<FeasibilityRun> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("gamma must be positive and finite, got {gamma}")));
        }
        let dim = self.n_groups.saturating_sub(1);
        let bound = THETA_MAX.ln();
        let mut cuts = Vec::new();

        if dim == 0 {
            let theta = vec![1.0];
            let value = self.scaled_norm(&theta);
            let (ok, lambda, v) = self.check(&theta, gamma);
            let outcome = if ok {
                EngineOutcome::Feasible { theta: theta.clone(), value }
            } else {
                cuts.push(self.cut_record(&theta, gamma, lambda, v));
                EngineOutcome::Infeasible { cuts }
            };
            return Ok(FeasibilityRun { outcome, iterations: 1, best: (value, theta) });
        }

        let mut center: Vec<f64> = match warm {
            Some(t) if t.len() == self.n_groups => self.log_from_theta(t).iter().map(|x| x.clamp(-bound, bound)).collect(),
            _ => vec![0.0; dim],
        };
        let radius_sq: f64 = center.iter().map(|c| (bound + c.abs()).powi(2)).sum();
        let mut loc = if dim == 1 {
            Localizer::Interval { lo: -bound, hi: bound }
        } else {
            Localizer::Ellipsoid { p: DMatrix::identity(dim, dim) * radius_sq }
        };
        if let Localizer::Interval { .. } = loc {
            center[0] = center[0].clamp(-bound, bound);
        }
        let mut best = (f64::INFINITY, vec![1.0; self.n_groups]);

        for iter in 1..=opts.max_iter {
            // box first
            if let Some(i) = (0..dim).find(|&i| center[i].abs() > bound) {
                let mut g = vec![0.0; dim];
                g[i] = center[i].signum();
                let h = center[i].abs() - bound;
                if !loc.cut(&mut center, &g, h) {
                    return Ok(infeasible(cuts, iter, best));
                }
                continue;
            }
            let theta = self.theta_from_log(&center);
            let (ok, lambda, v) = self.check(&theta, gamma);
            let (value, grad) = self.value_and_grad(&theta);
            if value < best.0 {
                best = (value, theta.clone());
            }
            if ok {
                return Ok(FeasibilityRun {
                    outcome: EngineOutcome::Feasible { theta, value },
                    iterations: iter,
                    best,
                });
            }
            cuts.push(self.cut_record(&theta, gamma, lambda, v));
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm <= 1e-14 * value.max(f64::MIN_POSITIVE) {
                // stationary point of a convex function: f >= f(x) >= gamma everywhere
                return Ok(infeasible(cuts, iter, best));
            }
            let h = (value - gamma).max(0.0);
            if !loc.cut(&mut center, &grad, h) {
                return Ok(infeasible(cuts, iter, best));
            }
            if loc.size() < opts.resolution {
                return Ok(infeasible(cuts, iter, best));
            }
        }
        Err(Error::Numerical(format!(
            "scaling search did not resolve feasibility at gamma = {gamma} within {} iterations",
            opts.max_iter
        )))
    }

    /// Bisection on `gamma` over `[lower, sigma_max(M)]`. Returns the best
    /// certified scaled norm, its scaling, and the number of feasibility problems solved.
    pub fn minimize(&self, lower: f64, tol: f64, opts: &EngineOptions) -> Result<UpperBound> {
        let ones = vec![1.0; self.n_groups.max(1)];
        let mut hi = self.scaled_norm(&ones);
        let mut theta_star = ones;
        let mut lo = lower.min(hi).max(0.0);
        let mut steps = 0;
        let mut cut_iterations = 0;
        if hi == 0.0 || self.n_groups <= 1 {
            return Ok(UpperBound { value: hi, theta: theta_star, steps, cut_iterations });
        }
        let mut warm: Option<Vec<f64>> = None;
        while hi - lo > tol * hi.max(1.0) {
            let gamma = 0.5 * (lo + hi);
            let run = self.feasibility(gamma, opts, warm.as_deref())?;
            steps += 1;
            cut_iterations += run.iterations;
            if run.best.0 < hi {
                hi = run.best.0;
                theta_star = run.best.1.clone();
                warm = Some(run.best.1.clone());
            }
            match run.outcome {
                EngineOutcome::Feasible { theta, value } => {
                    if value <= hi {
                        hi = value;
                        theta_star = theta.clone();
                    }
                    warm = Some(theta);
                }
                EngineOutcome::Infeasible { .. } => lo = lo.max(gamma.min(hi)),
            }
        }
        Ok(UpperBound { value: hi, theta: theta_star, steps, cut_iterations })
    }
}

#[derive(Debug, Clone)]
pub struct UpperBound {
    pub value: f64,
    pub theta: Vec<f64>,
    pub steps: usize,
    pub cut_iterations: usize,
}

fn infeasible(cuts: Vec<Cut>, iterations: usize, best: (f64, Vec<f64>)) -> FeasibilityRun {
    FeasibilityRun { outcome: EngineOutcome::Infeasible { cuts }, iterations, best }
}

/// Localization set for the free log coordinates.
pub(crate) enum Localizer {
    Interval { lo: f64, hi: f64 },
    Ellipsoid { p: DMatrix<f64> },
}

impl Localizer {
    /// Keeps `{y : g^T (y - c) <= -h}`, `h >= 0`. Returns `false` when the
    /// localization set becomes empty.
    pub(crate) fn cut(&mut self, center: &mut [f64], g: &[f64], h: f64) -> bool {
        match self {
            Localizer::Interval { lo, hi } => {
                let c = center[0];
                let g = g[0];
                if g == 0.0 {
                    return h <= 0.0;
                }
                let edge = c - h / g;
                if g > 0.0 {
                    *hi = hi.min(edge);
                } else {
                    *lo = lo.max(edge);
                }
                if *lo > *hi {
                    return false;
                }
                center[0] = 0.5 * (*lo + *hi);
                true
            }
            Localizer::Ellipsoid { p } => {
                let n = center.len() as f64;
                let gv = DVector::from_column_slice(g);
                let pg = &*p * &gv;
                let gpg = gv.dot(&pg);
                if gpg <= 0.0 || !gpg.is_finite() {
                    return false;
                }
                let s = gpg.sqrt();
                let alpha = h / s;
                if alpha >= 1.0 {
                    return false;
                }
                let b = pg / s;
                let step = (1.0 + n * alpha) / (n + 1.0);
                for (ci, bi) in center.iter_mut().zip(b.iter()) {
                    *ci -= step * bi;
                }
                let shrink = n * n / (n * n - 1.0) * (1.0 - alpha * alpha);
                let rank1 = 2.0 * (1.0 + n * alpha) / ((n + 1.0) * (1.0 + alpha));
                *p = (&*p - &b * b.transpose() * rank1) * shrink;
                // keep it symmetric against rounding drift
                let sym = (&*p + p.transpose()) * 0.5;
                *p = sym;
                true
            }
        }
    }

    /// `max_{y in E} g^T (y - c)`.
    pub(crate) fn support(&self, g: &[f64]) -> f64 {
        match self {
            Localizer::Interval { lo, hi } => 0.5 * (hi - lo) * g[0].abs(),
            Localizer::Ellipsoid { p } => {
                let gv = DVector::from_column_slice(g);
                gv.dot(&(p * &gv)).max(0.0).sqrt()
            }
        }
    }

    /// Upper bound on the largest semi-axis.
    pub(crate) fn size(&self) -> f64 {
        match self {
            Localizer::Interval { lo, hi } => 0.5 * (hi - lo),
            Localizer::Ellipsoid { p } => p.trace().max(0.0).sqrt(),
        }
    }
}

//! Foschini–Miljanic power control `p' = K(-I + Psi G) p + K Psi nu` with
//! uncertain interference `G = G0 + E Delta F`.
//!
//! `G[(i, j)]` is the gain from channel `j` into receiver `i` (usually
//! written `g_ji`). Use [`interference_from_links`] to build it from `(from, to)`
//! pairs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mu_core::MuOptions;
use crate::oracles::{restart_rng, sample_unit_boundary, SampleMode};
use crate::structure::{block_norm, BlockStructure, StructuredPerturbation};
use crate::systems::{self, DominanceMode, RobustOptions, RobustReport, RobustVerdict, StateSpaceSystem};

/// One interference path: channel `from` leaks into receiver `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub from: usize,
    pub to: usize,
    pub gain: f64,
}

/// `G[(to, from)] = gain`; unlisted pairs are zero.
pub fn interference_from_links(n: usize, links: &[Link]) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(n, n);
    let mut seen = vec![false; n * n];
    for (idx, l) in links.iter().enumerate() {
        if l.from >= n || l.to >= n {
            return Err(Error::InvalidInput(format!(
                "link {idx}: channel index out of range for {n} channels"
            )));
        }
        if l.from == l.to {
            return Err(Error::InvalidInput(format!("link {idx}: a channel cannot interfere with itself")));
        }
        if std::mem::replace(&mut seen[l.to * n + l.from], true) {
            return Err(Error::InvalidInput(format!("link {idx}: duplicate pair {} -> {}", l.from, l.to)));
        }
        g[(l.to, l.from)] = l.gain;
    }
    Ok(g)
}

/// Nonzero off-diagonal entries of `G` as links, ordered by `(from, to)`.
pub fn links_from_interference(g: &DMatrix<f64>) -> Vec<Link> {
    let n = g.nrows();
    let mut out = Vec::new();
    for from in 0..n {
        for to in 0..n {
            if from != to && g[(to, from)] != 0.0 {
                out.push(Link { from, to, gain: g[(to, from)] });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmProblem {
    h: DVector<f64>,
    g0: DMatrix<f64>,
    nu: DVector<f64>,
    gamma: DVector<f64>,
    k: DVector<f64>,
    e: DMatrix<f64>,
    f: DMatrix<f64>,
    structure: BlockStructure,
}

fn check_vec(v: &DVector<f64>, n: usize, name: &str, ok: impl Fn(f64) -> bool, range: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!("{name} has length {}, expected {n}", v.len())));
    }
    if let Some((i, x)) = v.iter().enumerate().find(|(_, &x)| !(x.is_finite() && ok(x))) {
        return Err(Error::InvalidInput(format!("{name}[{i}] = {x} is outside {range}")));
    }
    Ok(())
}

impl FmProblem {
    /// `e` is `N x r`, `f` is `r x N`, `r` the dimension of the structure.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h: DVector<f64>,
        g0: DMatrix<f64>,
        nu: DVector<f64>,
        gamma: DVector<f64>,
        k: DVector<f64>,
        e: DMatrix<f64>,
        f: DMatrix<f64>,
        structure: BlockStructure,
    ) -> Result<Self> {
        let n = h.len();
        if n == 0 {
            return Err(Error::InvalidInput("at least one channel is required".into()));
        }
        check_vec(&h, n, "h", |x| x > 0.0 && x <= 1.0, "(0, 1]")?;
        check_vec(&nu, n, "nu", |x| x > 0.0, "(0, inf)")?;
        check_vec(&gamma, n, "gamma", |x| x >= 0.0, "[0, inf)")?;
        check_vec(&k, n, "k", |x| x > 0.0, "(0, inf)")?;
        if g0.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("G0 is {}x{}, expected {n}x{n}", g0.nrows(), g0.ncols())));
        }
        for i in 0..n {
            for j in 0..n {
                let x = g0[(i, j)];
                if i == j && x != 0.0 {
                    return Err(Error::InvalidInput(format!("G0[{i}][{i}] = {x}, the diagonal must be zero")));
                }
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::InvalidInput(format!("G0[{i}][{j}] = {x} is outside [0, 1]")));
                }
            }
        }
        let r = structure.total_dim();
        if e.shape() != (n, r) {
            return Err(Error::DimensionMismatch(format!("E is {}x{}, expected {n}x{r}", e.nrows(), e.ncols())));
        }
        if f.shape() != (r, n) {
            return Err(Error::DimensionMismatch(format!("F is {}x{}, expected {r}x{n}", f.nrows(), f.ncols())));
        }
        linalg::require_finite(&e, "E")?;
        linalg::require_finite(&f, "F")?;
        Ok(Self { h, g0, nu, gamma, k, e, f, structure })
    }

    pub fn channels(&self) -> usize {
        self.h.len()
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn g0(&self) -> &DMatrix<f64> {
        &self.g0
    }

    pub fn nu(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn gamma(&self) -> &DVector<f64> {
        &self.gamma
    }

    pub fn k(&self) -> &DVector<f64> {
        &self.k
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn f(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Same problem with `E` multiplied by `c` (mu scales by `c`).
    pub fn with_uncertainty_scale(&self, c: f64) -> Result<Self> {
        let mut out = self.clone();
        out.e *= c;
        linalg::require_finite(&out.e, "E")?;
        Ok(out)
    }

    /// `Psi = diag(gamma_i / h_i)`.
    pub fn psi(&self) -> DVector<f64> {
        self.gamma.component_div(&self.h)
    }
}

/// Matrices of the affine system `p' = A p + K Psi nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct Nominal {
    pub a: DMatrix<f64>,
    /// `K Psi`, the input matrix for the noise.
    pub input: DMatrix<f64>,
    /// `K Psi nu`.
    pub offset: DVector<f64>,
}

fn closed_loop_matrix(prob: &FmProblem, g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = prob.channels();
    let psi = prob.psi();
    DMatrix::from_fn(n, n, |i, j| {
        let own = if i == j { -1.0 } else { 0.0 };
        prob.k[i] * (own + psi[i] * g[(i, j)])
    })
}

pub fn build_nominal(prob: &FmProblem) -> Nominal {
    let kpsi = prob.k.component_mul(&prob.psi());
    Nominal {
        a: closed_loop_matrix(prob, &prob.g0),
        input: DMatrix::from_diagonal(&kpsi),
        offset: kpsi.component_mul(&prob.nu),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NominalAnalysis {
    pub feasible: bool,
    /// `rho(Psi G0)`.
    pub rho: f64,
    /// Spectral abscissa of `K(-I + Psi G0)`.
    pub abscissa: f64,
    /// `(I - Psi G0)^{-1} Psi nu` when feasible.
    pub p_bar: Option<DVector<f64>>,
}

/// Feasible iff `rho(Psi G0) < 1`, cross-checked against the spectral
/// abscissa of the Metzler matrix `K(-I + Psi G0)`.
pub fn nominal_feasible(prob: &FmProblem) -> Result<NominalAnalysis> {
    let n = prob.channels();
    let psi = prob.psi();
    let pg = DMatrix::from_fn(n, n, |i, j| psi[i] * prob.g0[(i, j)]);
    let rho = linalg::perron_root(&pg);
    let abscissa = linalg::spectral_abscissa(&build_nominal(prob).a);
    let feasible = rho < 1.0;
    let hurwitz = abscissa < systems::hurwitz_margin(&build_nominal(prob).a);
    if (rho - 1.0).abs() > 1e-8 && feasible != hurwitz {
        return Err(Error::Numerical(format!(
            "rho(Psi G0) = {rho} disagrees with the spectral abscissa {abscissa}"
        )));
    }
    let p_bar = if feasible {
        let lhs = DMatrix::identity(n, n) - &pg;
        Some(
            lhs.lu()
                .solve(&psi.component_mul(&prob.nu))
                .ok_or_else(|| Error::Numerical("I - Psi G0 is singular".into()))?,
        )
    } else {
        None
    };
    Ok(NominalAnalysis { feasible, rho, abscissa, p_bar })
}

/// Auxiliary system from the uncertainty input to the uncertainty output:
/// `p' = K(-I + Psi G0) p + K Psi E w`, `z = F p`, with optional delays on
/// the `r x r` transfer matrix.
pub fn auxiliary_system(prob: &FmProblem, delays: Option<DMatrix<f64>>) -> Result<StateSpaceSystem> {
    let nominal = build_nominal(prob);
    let r = prob.structure.total_dim();
    StateSpaceSystem::new(nominal.a, &nominal.input * &prob.e, prob.f.clone(), DMatrix::zeros(r, r), delays)
}

#[derive(Debug, Clone)]
pub struct FmRobust {
    pub report: RobustReport,
    /// `E, F >= 0`: the auxiliary system is internally positive, so its
    /// dominance needs no check.
    pub internally_positive: bool,
    /// For `NotRobust`: the witness rescaled to block norm 1, which drives
    /// `rho(M(0) Delta)` above 1.
    pub boundary: Option<StructuredPerturbation>,
}

impl FmRobust {
    pub fn mu(&self) -> f64 {
        self.report.mu.mu
    }

    pub fn is_robust(&self) -> bool {
        matches!(self.report.verdict, RobustVerdict::RobustlyStable { .. })
    }
}

/// Robust stability against `G = G0 + E Delta F`, `|Delta| <= 1`, decided by
/// mu of `F (I - Psi G0)^{-1} Psi E`.
pub fn robust_test(prob: &FmProblem, opts: &MuOptions) -> Result<FmRobust> {
    robust_test_with_delays(prob, None, opts)
}

fn robust_test_with_delays(prob: &FmProblem, delays: Option<DMatrix<f64>>, opts: &MuOptions) -> Result<FmRobust> {
    let nominal = nominal_feasible(prob)?;
    if !nominal.feasible {
        return Err(Error::Precondition(format!(
            "the nominal problem is infeasible: rho(Psi G0) = {}",
            nominal.rho
        )));
    }
    let internally_positive = linalg::is_nonnegative(&prob.e) && linalg::is_nonnegative(&prob.f);
    let dominance = if internally_positive { DominanceMode::Assumed } else { DominanceMode::default() };
    let sys = auxiliary_system(prob, delays)?;
    let report = systems::robust_stability(&sys, &prob.structure, &RobustOptions { mu: opts.clone(), dominance })?;
    let boundary = match &report.verdict {
        RobustVerdict::NotRobust { witness, .. } => {
            let norm = block_norm(&witness.perturbation);
            (norm > 0.0).then(|| witness.perturbation.scale(1.0 / norm))
        }
        _ => None,
    };
    Ok(FmRobust { report, internally_positive, boundary })
}

/// `G0 + E Delta F` for a perturbation in the canonical block order of the
/// problem's structure.
pub fn perturbed_interference(prob: &FmProblem, delta: &StructuredPerturbation) -> Result<DMatrix<Complex64>> {
    if delta.layout() != prob.structure.blocks() {
        return Err(Error::DimensionMismatch("perturbation does not match the problem structure".into()));
    }
    let d = prob.structure.to_input(&delta.assemble())?;
    Ok(linalg::to_complex(&prob.g0) + linalg::to_complex(&prob.e) * d * linalg::to_complex(&prob.f))
}

/// Spectral abscissa of `K(-I + Psi(G0 + E Delta F))` (complex `Delta` allowed).
pub fn closed_loop_abscissa(prob: &FmProblem, delta: &StructuredPerturbation) -> Result<f64> {
    let g = perturbed_interference(prob, delta)?;
    let n = prob.channels();
    let psi = prob.psi();
    let a = DMatrix::from_fn(n, n, |i, j| {
        let own = if i == j { -1.0 } else { 0.0 };
        (g[(i, j)] * psi[i] + own) * prob.k[i]
    });
    Ok(linalg::spectral_abscissa_c(&a))
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// Defaults to `20 / |closed-loop abscissa|`, clamped to `[10, 1e4] / min k`.
    pub horizon: Option<f64>,
    /// Defaults to `0.01 / max k`.
    pub dt: Option<f64>,
    /// Defaults to zero power.
    pub p0: Option<DVector<f64>>,
}

/// Rows recorded per trajectory at most (the integrator itself runs every step).
const MAX_ROWS: usize = 4000;
const MAX_STEPS: f64 = 2e7;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per recorded time.
    pub powers: DMatrix<f64>,
    /// `Gamma_i = h_i p_i / ((G p)_i + nu_i)` with the perturbed `G`.
    pub sinr: DMatrix<f64>,
    pub converged: bool,
    pub diverged: bool,
    /// `(I - Psi G)^{-1} Psi nu` when the closed loop is Hurwitz.
    pub limit: Option<DVector<f64>>,
    pub abscissa: f64,
    pub dt: f64,
    /// Steps that had to be halved to keep powers nonnegative.
    pub halvings: usize,
    pub min_power: f64,
}

/// Explicit Euler integration of the perturbed dynamics.
///
/// When the closed loop is Metzler a step that would push a power below
/// `-1e-9` is halved and retried; a step shrinking below `dt * 2^-40` is a
/// numerical failure. Integration stops early once the power norm exceeds
/// `1e12` times its natural scale.
pub fn simulate(prob: &FmProblem, delta: &StructuredPerturbation, opts: &SimOptions) -> Result<Trajectory> {
    let n = prob.channels();
    let norm = block_norm(delta);
    if norm > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!("perturbation norm {norm} exceeds 1")));
    }
    let gc = perturbed_interference(prob, delta)?;
    if gc.iter().any(|z| z.im != 0.0) {
        return Err(Error::InvalidInput("simulation needs a real perturbation".into()));
    }
    let g = gc.map(|z| z.re);
    let a = closed_loop_matrix(prob, &g);
    let psi = prob.psi();
    let b = prob.k.component_mul(&psi).component_mul(&prob.nu);
    let p0 = opts.p0.clone().unwrap_or_else(|| DVector::zeros(n));
    check_vec(&p0, n, "p0", |x| x >= 0.0, "[0, inf)")?;

    let k_min = prob.k.min();
    let k_max = prob.k.max();
    let dt0 = opts.dt.unwrap_or(0.01 / k_max);
    if !(dt0 > 0.0 && dt0.is_finite()) {
        return Err(Error::InvalidInput(format!("step {dt0} must be positive")));
    }
    let abscissa = linalg::spectral_abscissa(&a);
    let horizon = opts
        .horizon
        .unwrap_or_else(|| (20.0 / abscissa.abs()).clamp(10.0 / k_min, 1e4 / k_min).min(MAX_STEPS * dt0));
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
    }
    let hurwitz = abscissa < systems::hurwitz_margin(&a);
    let limit = if hurwitz {
        let lhs = DMatrix::identity(n, n) - DMatrix::from_fn(n, n, |i, j| psi[i] * g[(i, j)]);
        lhs.lu().solve(&psi.component_mul(&prob.nu))
    } else {
        None
    };
    let metzler = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] >= 0.0));
    let blow_up = 1e12 * (1.0 + p0.norm() + psi.component_mul(&prob.nu).norm());
    let record_every = horizon / MAX_ROWS as f64;

    let sinr = |p: &DVector<f64>| {
        let interference = &g * p + &prob.nu;
        DVector::from_fn(n, |i, _| prob.h[i] * p[i] / interference[i])
    };
    let mut times = vec![0.0];
    let mut rows = vec![p0.clone()];
    let mut t = 0.0;
    let mut p = p0;
    let mut halvings = 0;
    let mut min_power = p.min();
    let mut next_record = record_every;
    let mut blew_up = false;
    while t < horizon {
        let mut dt = dt0.min(horizon - t);
        let mut candidate = &p + (&a * &p + &b) * dt;
        while metzler && candidate.min() < -1e-9 {
            dt *= 0.5;
            halvings += 1;
            if dt < dt0 * 2f64.powi(-40) {
                return Err(Error::Numerical(format!("step size underflow at t = {t}")));
            }
            candidate = &p + (&a * &p + &b) * dt;
        }
        p = candidate;
        t += dt;
        min_power = min_power.min(p.min());
        if !p.iter().all(|x| x.is_finite()) || p.norm() > blow_up {
            blew_up = true;
        }
        if t >= next_record || t >= horizon || blew_up {
            times.push(t);
            rows.push(p.clone());
            next_record = t + record_every;
        }
        if blew_up {
            break;
        }
    }
    let powers = DMatrix::from_fn(rows.len(), n, |r, i| rows[r][i]);
    let sinr_rows: Vec<DVector<f64>> = rows.iter().map(sinr).collect();
    let sinr = DMatrix::from_fn(rows.len(), n, |r, i| sinr_rows[r][i]);

    let last = rows.last().expect("initial row").norm();
    let half = times.partition_point(|&s| s < 0.5 * t);
    let mid = rows[half.min(rows.len() - 1)].norm();
    let diverged = !hurwitz && (blew_up || last > 2.0 * mid.max(f64::MIN_POSITIVE));
    let converged = match &limit {
        Some(l) => (rows.last().expect("initial row") - l).norm() <= 1e-6 * (1.0 + l.norm()),
        None => false,
    };
    Ok(Trajectory {
        times,
        powers,
        sinr,
        converged,
        diverged,
        limit,
        abscissa,
        dt: dt0,
        halvings,
        min_power,
    })
}

#[derive(Debug, Clone)]
pub enum Falsification {
    NoneFound { samples: usize },
    Destabilizer { sample: usize, perturbation: StructuredPerturbation, abscissa: f64 },
}

/// Threshold on the closed-loop spectral abscissa for a sample to count as destabilizing.
pub const FALSIFY_ABSCISSA: f64 = -1e-9;

/// Draws perturbations on the unit boundary of the structure, alternating
/// nonnegative dyads and sign-mixed samples, and returns the first whose
/// closed loop has spectral abscissa `>= -1e-9`. Sample `i` uses its own
/// seed stream.
pub fn falsify(prob: &FmProblem, samples: usize, seed: u64) -> Result<Falsification> {
    for i in 0..samples {
        let mut rng = restart_rng(seed, i);
        let mode = if i % 2 == 0 { SampleMode::Nonnegative } else { SampleMode::SignMixed };
        let delta = sample_unit_boundary(&prob.structure, mode, &mut rng);
        let abscissa = closed_loop_abscissa(prob, &delta)?;
        if abscissa >= FALSIFY_ABSCISSA {
            return Ok(Falsification::Destabilizer { sample: i, perturbation: delta, abscissa });
        }
    }
    Ok(Falsification::NoneFound { samples })
}

#[derive(Debug, Clone)]
pub struct DelayReport {
    pub mu_plain: f64,
    pub mu_delayed: f64,
    /// Static gains agree bit for bit.
    pub gain_identical: bool,
    pub verdict_identical: bool,
    pub plain: FmRobust,
    pub delayed: FmRobust,
}

/// Runs the robust test with and without delays on the `r x r` uncertainty
/// channels and compares the outcomes.
pub fn delay_invariance(prob: &FmProblem, delays: &DMatrix<f64>, opts: &MuOptions) -> Result<DelayReport> {
    let plain = robust_test_with_delays(prob, None, opts)?;
    let delayed = robust_test_with_delays(prob, Some(delays.clone()), opts)?;
    let same_kind = std::mem::discriminant(&plain.report.verdict) == std::mem::discriminant(&delayed.report.verdict);
    Ok(DelayReport {
        mu_plain: plain.mu(),
        mu_delayed: delayed.mu(),
        gain_identical: plain.report.static_gain == delayed.report.static_gain,
        verdict_identical: same_kind,
        plain,
        delayed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{BlockSpec, Field};

    fn symmetric(e_scale: f64) -> FmProblem {
        let g0 = DMatrix::from_row_slice(2, 2, &[0.0, 0.8, 0.8, 0.0]);
        FmProblem::new(
            DVector::from_element(2, 1.0),
            g0,
            DVector::from_element(2, 0.1),
            DVector::from_element(2, 0.5),
            DVector::from_element(2, 1.0),
            DMatrix::identity(2, 2) * e_scale,
            DMatrix::identity(2, 2),
            BlockStructure::single_full(2).unwrap(),
        )
        .unwrap()
    }

    fn zero_delta(prob: &FmProblem) -> StructuredPerturbation {
        StructuredPerturbation::zero(prob.structure())
    }

    #[test]
    fn links_are_transposed_once() {
        let links = [Link { from: 0, to: 1, gain: 0.3 }, Link { from: 2, to: 0, gain: 0.7 }];
        let g = interference_from_links(3, &links).unwrap();
        assert_eq!(g[(1, 0)], 0.3);
        assert_eq!(g[(0, 2)], 0.7);
        assert_eq!(links_from_interference(&g), links.to_vec());
        assert!(interference_from_links(2, &[Link { from: 1, to: 1, gain: 0.1 }]).is_err());
        assert!(interference_from_links(2, &[Link { from: 0, to: 2, gain: 0.1 }]).is_err());
    }

    #[test]
    fn nominal_examples() {
        let mut p = symmetric(1.0);
        p.g0 = DMatrix::zeros(2, 2);
        let nom = build_nominal(&p);
        assert_eq!(nom.a, -DMatrix::<f64>::identity(2, 2));
        let an = nominal_feasible(&p).unwrap();
        assert!(an.feasible);
        assert_eq!(an.p_bar.unwrap(), p.psi().component_mul(p.nu()));

        let p = symmetric(1.0);
        assert_eq!(build_nominal(&p).a, DMatrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.4, -1.0]));
        let an = nominal_feasible(&p).unwrap();
        assert!(an.feasible && (an.rho - 0.4).abs() < 1e-12);

        let g0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let mut q = symmetric(1.0);
        q.g0 = g0;
        let a = build_nominal(&q).a;
        assert_eq!(a[(1, 0)], 0.0);
        assert!(a[(0, 1)] > 0.0);

        let mut far = symmetric(1.0);
        far.gamma *= 1.25 / 0.4;
        let an = nominal_feasible(&far).unwrap();
        assert!(!an.feasible && (an.rho - 1.25).abs() < 1e-12);
        assert!(an.p_bar.is_none());
    }

    #[test]
    fn validation() {
        let p = symmetric(1.0);
        let bad_diag = DMatrix::from_row_slice(2, 2, &[0.1, 0.8, 0.8, 0.0]);
        assert!(FmProblem::new(p.h.clone(), bad_diag, p.nu.clone(), p.gamma.clone(), p.k.clone(), p.e.clone(), p.f.clone(), p.structure.clone()).is_err());
        let bad_h = DVector::from_vec(vec![1.5, 1.0]);
        assert!(FmProblem::new(bad_h, p.g0.clone(), p.nu.clone(), p.gamma.clone(), p.k.clone(), p.e.clone(), p.f.clone(), p.structure.clone()).is_err());
        let bad_e = DMatrix::zeros(2, 3);
        assert!(FmProblem::new(p.h.clone(), p.g0.clone(), p.nu.clone(), p.gamma.clone(), p.k.clone(), bad_e, p.f.clone(), p.structure.clone()).is_err());
    }

    #[test]
    fn robust_examples() {
        let opts = MuOptions::default();
        let zero = symmetric(0.0);
        let r = robust_test(&zero, &opts).unwrap();
        assert_eq!(r.mu(), 0.0);
        assert!(r.is_robust());

        let p = symmetric(0.3);
        let r = robust_test(&p, &opts).unwrap();
        let lhs = DMatrix::identity(2, 2) - DMatrix::from_row_slice(2, 2, &[0.0, 0.4, 0.4, 0.0]);
        let expected = linalg::spectral_norm(&(lhs.try_inverse().unwrap() * 0.5)) * 0.3;
        assert!((r.mu() - expected).abs() < 1e-8, "{} vs {expected}", r.mu());
        assert!(r.is_robust());

        let p = symmetric(0.3 * 1.05 / expected);
        let r = robust_test(&p, &opts).unwrap();
        assert!((r.mu() - 1.05).abs() < 1e-8);
        let RobustVerdict::NotRobust { witness, .. } = &r.report.verdict else { panic!("expected NotRobust") };
        assert!(closed_loop_abscissa(&p, &witness.perturbation).unwrap() >= -1e-9);
        let boundary = r.boundary.as_ref().unwrap();
        assert!((block_norm(boundary) - 1.0).abs() < 1e-12);
        assert!(closed_loop_abscissa(&p, boundary).unwrap() > 0.0);
    }

    #[test]
    fn infeasible_nominal_is_rejected() {
        let mut p = symmetric(0.1);
        p.gamma *= 3.0;
        assert!(matches!(robust_test(&p, &MuOptions::default()), Err(Error::Precondition(_))));
    }

    #[test]
    fn simulate_converges_without_interference() {
        let mut p = symmetric(0.0);
        p.g0 = DMatrix::zeros(2, 2);
        p.k = DVector::from_vec(vec![1.0, 3.0]);
        let traj = simulate(&p, &zero_delta(&p), &SimOptions::default()).unwrap();
        assert!(traj.converged && !traj.diverged);
        let target = p.psi().component_mul(p.nu());
        let last = traj.powers.row(traj.powers.nrows() - 1).transpose();
        assert!((last - &target).amax() < 1e-6);
        // first recorded step follows 1 - e^{-k t}
        let t = traj.times[1];
        let expect = target[1] * (1.0 - (-3.0 * t).exp());
        assert!((traj.powers[(1, 1)] - expect).abs() < 1e-2 * target[1]);
    }

    #[test]
    fn simulate_reaches_sinr_targets() {
        let p = symmetric(0.3);
        let traj = simulate(&p, &zero_delta(&p), &SimOptions::default()).unwrap();
        assert!(traj.converged);
        assert!(traj.min_power >= -1e-9);
        let last = traj.sinr.row(traj.sinr.nrows() - 1);
        for i in 0..2 {
            assert!(last[i] >= p.gamma()[i] - 1e-6, "{last}");
        }
    }

    #[test]
    fn simulate_diverges_on_the_witness() {
        let base = symmetric(1.0);
        let mu = robust_test(&base, &MuOptions::default()).unwrap().mu();
        let p = base.with_uncertainty_scale(1.1 / mu).unwrap();
        let r = robust_test(&p, &MuOptions::default()).unwrap();
        let traj = simulate(&p, r.boundary.as_ref().unwrap(), &SimOptions::default()).unwrap();
        assert!(traj.diverged && !traj.converged);
        assert!(traj.min_power >= -1e-9);
    }

    #[test]
    fn falsify_examples() {
        let p = symmetric(0.3);
        assert!(matches!(falsify(&p, 2000, 1).unwrap(), Falsification::NoneFound { .. }));
        let p = symmetric(0.0);
        assert!(matches!(falsify(&p, 100, 1).unwrap(), Falsification::NoneFound { .. }));

        let base = symmetric(1.0);
        let mu = robust_test(&base, &MuOptions::default()).unwrap().mu();
        let p = base.with_uncertainty_scale(1.5 / mu).unwrap();
        assert!(matches!(falsify(&p, 2000, 1).unwrap(), Falsification::Destabilizer { .. }));
    }

    #[test]
    fn delays_do_not_change_the_test() {
        let p = symmetric(0.7);
        let tau = DMatrix::from_row_slice(2, 2, &[0.0, 3.5, 9.0, 0.2]);
        let r = delay_invariance(&p, &tau, &MuOptions::default()).unwrap();
        assert!(r.gain_identical && r.verdict_identical);
        assert_eq!(r.mu_plain, r.mu_delayed);
        let r = delay_invariance(&p, &DMatrix::zeros(2, 2), &MuOptions::default()).unwrap();
        assert_eq!(r.mu_plain, r.mu_delayed);
    }

    #[test]
    fn scalar_structure_problem() {
        let mut p = symmetric(0.5);
        p.structure = BlockStructure::new(vec![BlockSpec::scalar(1, Field::Real), BlockSpec::scalar(1, Field::Real)]).unwrap();
        let r = robust_test(&p, &MuOptions::default()).unwrap();
        let m = &r.report.static_gain;
        assert!((r.mu() - linalg::perron_root(m)).abs() < 1e-6);
    }
}

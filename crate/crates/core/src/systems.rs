//! Linear time-invariant systems `x' = Ax + Bu`, `y = Cx + Du` with optional
//! input/output delays, and the zero-frequency robust stability test for
//! positively dominated systems.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mu_core::{self, engine, MuOptions, MuResult, NonnegMatrix};
use crate::structure::{lift_to_original, nonnegative_witness, reduce_structure, BlockStructure, StructuredPerturbation};

/// Square-I/O state-space system with per-entry delays `tau_ik` applied to
/// the transfer matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    delays: Option<DMatrix<f64>>,
}

impl StateSpaceSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        delays: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = linalg::require_square(&a, "A")?;
        let m = linalg::require_square(&d, "D")?;
        if b.shape() != (n, m) {
            return Err(Error::DimensionMismatch(format!("B is {}x{}, expected {n}x{m}", b.nrows(), b.ncols())));
        }
        if c.shape() != (m, n) {
            return Err(Error::DimensionMismatch(format!("C is {}x{}, expected {m}x{n}", c.nrows(), c.ncols())));
        }
        for (name, x) in [("A", &a), ("B", &b), ("C", &c), ("D", &d)] {
            linalg::require_finite(x, name)?;
        }
        if let Some(t) = &delays {
            if t.shape() != (m, m) {
                return Err(Error::DimensionMismatch(format!(
                    "delay matrix is {}x{}, expected {m}x{m}",
                    t.nrows(),
                    t.ncols()
                )));
            }
            linalg::require_finite(t, "delays")?;
            if t.iter().any(|&x| x < 0.0) {
                return Err(Error::InvalidInput("delays must be nonnegative".into()));
            }
        }
        Ok(Self { a, b, c, d, delays })
    }

    /// Static system `y = D u` (no states).
    pub fn static_map(d: DMatrix<f64>) -> Result<Self> {
        let m = linalg::require_square(&d, "D")?;
        Self::new(DMatrix::zeros(0, 0), DMatrix::zeros(0, m), DMatrix::zeros(m, 0), d, None)
    }

    pub fn with_delays(self, delays: Option<DMatrix<f64>>) -> Result<Self> {
        Self::new(self.a, self.b, self.c, self.d, delays)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn delays(&self) -> Option<&DMatrix<f64>> {
        self.delays.as_ref()
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn io_dim(&self) -> usize {
        self.d.nrows()
    }
}

/// Real parts must stay below `-1e-9 (1 + |A|)`.
pub fn hurwitz_margin(a: &DMatrix<f64>) -> f64 {
    -1e-9 * (1.0 + linalg::spectral_norm(a))
}

/// Returns the spectral abscissa, or `NotHurwitz` when it is above the margin.
pub fn check_hurwitz(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let abscissa = linalg::spectral_abscissa(a);
    if abscissa >= hurwitz_margin(a) {
        return Err(Error::NotHurwitz { abscissa });
    }
    Ok(abscissa)
}

/// `D + C (j omega I - A)^{-1} B` with entry `(i, k)` multiplied by `e^{-j omega tau_ik}`.
pub fn freq_response(sys: &StateSpaceSystem, omega: f64) -> Result<DMatrix<Complex64>> {
    if !omega.is_finite() {
        return Err(Error::InvalidInput(format!("frequency {omega} is not finite")));
    }
    let n = sys.states();
    let mut h = linalg::to_complex(&sys.d);
    if n > 0 {
        let s = Complex64::new(0.0, omega);
        let scale = 1.0 + linalg::spectral_norm(&sys.a);
        let near_pole = linalg::eigenvalues(&sys.a).iter().any(|l| (l - s).norm() <= 1e-12 * scale);
        let resolvent = DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { s } else { Complex64::new(0.0, 0.0) };
            diag - sys.a[(i, j)]
        });
        let x = if near_pole { None } else { resolvent.lu().solve(&linalg::to_complex(&sys.b)) };
        match x {
            Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => {
                h += linalg::to_complex(&sys.c) * x;
            }
            _ => return Err(Error::SingularResolvent { omega }),
        }
    }
    if let Some(t) = &sys.delays {
        for (z, tau) in h.iter_mut().zip(t.iter()) {
            if *tau != 0.0 {
                *z *= Complex64::from_polar(1.0, -omega * tau);
            }
        }
    }
    Ok(h)
}

/// `D + C (-A)^{-1} B`. Delays do not enter.
pub fn static_gain(sys: &StateSpaceSystem) -> Result<DMatrix<f64>> {
    check_hurwitz(&sys.a)?;
    if sys.states() == 0 {
        return Ok(sys.d.clone());
    }
    let x = (-&sys.a)
        .lu()
        .solve(&sys.b)
        .ok_or(Error::SingularResolvent { omega: 0.0 })?;
    Ok(&sys.d + &sys.c * x)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PositivityVerdict {
    /// No negative sample on the grid (approximate confirmation).
    Positive { samples: usize },
    /// `h_ik(t) < -1e-9`; at `t = 0` this refers to the feedthrough `D`.
    RefutedAt { t: f64, row: usize, col: usize, value: f64 },
}

/// Slack on impulse-response samples before a negative value counts.
pub const POSITIVITY_SLACK: f64 = 1e-9;

/// Samples the impulse response `C e^{At} B` on `[0, T]` every `dt` and
/// checks the feedthrough `D` separately.
pub fn check_external_positivity(sys: &StateSpaceSystem, horizon: f64, dt: f64) -> Result<PositivityVerdict> {
    if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite() && dt.is_finite()) {
        return Err(Error::InvalidInput("horizon and step must be positive".into()));
    }
    check_hurwitz(&sys.a)?;
    if let Some((idx, &v)) = sys.d.iter().enumerate().find(|(_, &v)| v < 0.0) {
        let m = sys.io_dim();
        return Ok(PositivityVerdict::RefutedAt { t: 0.0, row: idx % m, col: idx / m, value: v });
    }
    let steps = (horizon / dt).ceil() as usize;
    if sys.states() == 0 {
        return Ok(PositivityVerdict::Positive { samples: steps + 1 });
    }
    let step = (&sys.a * dt).exp();
    let mut x = sys.b.clone();
    for k in 0..=steps {
        let h = &sys.c * &x;
        if let Some((idx, &v)) = h.iter().enumerate().find(|(_, &v)| v < -POSITIVITY_SLACK) {
            let m = sys.io_dim();
            return Ok(PositivityVerdict::RefutedAt { t: k as f64 * dt, row: idx % m, col: idx / m, value: v });
        }
        x = &step * x;
    }
    Ok(PositivityVerdict::Positive { samples: steps + 1 })
}

/// Log-spaced frequency grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    /// `points` over `[1e-4, 1e4] * |spectral abscissa of A|`, the top raised
    /// to `10 rho(A)` when that is larger.
    Auto { points: usize },
    Explicit { lo: f64, hi: f64, points: usize },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Auto { points: 400 }
    }
}

/// Log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) || points == 0 {
        return Err(Error::InvalidInput(format!("invalid grid {lo}:{hi}:{points}")));
    }
    if points == 1 {
        return Ok(vec![lo]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDescription {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
    /// Extra evaluations spent refining local maxima.
    pub refinements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntryDominance {
    pub row: usize,
    pub col: usize,
    pub static_value: f64,
    pub worst_omega: f64,
    pub worst_modulus: f64,
    /// `static_value (1 + tol) - worst_modulus`; negative when refuted.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DominanceVerdict {
    Dominated,
    Refuted { omega: f64, row: usize, col: usize },
    /// No violation on the grid, but the tail roll-off check was not conclusive.
    InconclusiveGridPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominanceReport {
    pub verdict: DominanceVerdict,
    pub entries: Vec<EntryDominance>,
    pub grid: GridDescription,
}

impl DominanceReport {
    pub fn is_refuted(&self) -> bool {
        matches!(self.verdict, DominanceVerdict::Refuted { .. })
    }
}

fn auto_range(a: &DMatrix<f64>, abscissa: f64) -> (f64, f64) {
    if a.is_empty() {
        return (1e-4, 1e4);
    }
    let scale = abscissa.abs().max(f64::MIN_POSITIVE);
    let lo = 1e-4 * scale;
    let hi = (1e4 * scale).max(10.0 * linalg::spectral_radius_dense(a));
    (lo, hi)
}

/// Checks `m_ik(0) >= 0` and `|m_ik(j omega)| <= m_ik(0) (1 + tol)` on a
/// log grid with golden-section refinement around every local maximum.
pub fn check_positive_dominance(sys: &StateSpaceSystem, grid: GridSpec, tol: f64) -> Result<DominanceReport> {
    if tol.is_nan() || tol < 0.0 {
        return Err(Error::InvalidInput(format!("tolerance must be nonnegative, got {tol}")));
    }
    let abscissa = check_hurwitz(&sys.a)?;
    let g0 = static_gain(sys)?;
    let m = sys.io_dim();
    let (lo, hi, points) = match grid {
        GridSpec::Auto { points } => {
            let (lo, hi) = auto_range(&sys.a, abscissa);
            (lo, hi, points)
        }
        GridSpec::Explicit { lo, hi, points } => (lo, hi, points),
    };
    let omegas = log_grid(lo, hi, points)?;
    let responses = omegas
        .iter()
        .map(|&w| freq_response(sys, w))
        .collect::<Result<Vec<_>>>()?;
    let slack = 1e-12 * (1.0 + g0.amax());
    let mut refinements = 0;
    let mut entries = Vec::with_capacity(m * m);
    let mut refuted: Option<(f64, usize, usize)> = None;
    let mut rolls_off = true;

    for i in 0..m {
        for k in 0..m {
            let s0 = g0[(i, k)];
            let bound = s0 * (1.0 + tol) + slack;
            let modulus: Vec<f64> = responses.iter().map(|h| h[(i, k)].norm()).collect();
            let (mut worst_omega, mut worst) = (0.0, s0.abs());
            for (j, &v) in modulus.iter().enumerate() {
                if v > worst {
                    worst = v;
                    worst_omega = omegas[j];
                }
            }
            for j in 0..modulus.len() {
                let left = if j == 0 { f64::NEG_INFINITY } else { modulus[j - 1] };
                let right = modulus.get(j + 1).copied().unwrap_or(f64::NEG_INFINITY);
                if modulus[j] < left || modulus[j] < right || modulus[j] == 0.0 {
                    continue;
                }
                let a = omegas[j.saturating_sub(1)];
                let b = omegas[(j + 1).min(omegas.len() - 1)];
                if a == b {
                    continue;
                }
                let (w, v, evals) = refine_peak(sys, i, k, a, b)?;
                refinements += evals;
                if v > worst {
                    worst = v;
                    worst_omega = w;
                }
            }
            let entry_refuted = s0 < -tol.max(slack) || worst > bound;
            if entry_refuted && refuted.is_none() {
                refuted = Some((if s0 < 0.0 && worst <= bound { 0.0 } else { worst_omega }, i, k));
            }
            // tail: nonincreasing over the last points and the feedthrough below the bound
            let tail = modulus.len().saturating_sub(10);
            let decreasing = modulus[tail..].windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12) + slack);
            if !(decreasing && sys.d[(i, k)].abs() <= bound) {
                rolls_off = false;
            }
            entries.push(EntryDominance {
                row: i,
                col: k,
                static_value: s0,
                worst_omega,
                worst_modulus: worst,
                margin: s0 * (1.0 + tol) - worst,
            });
        }
    }
    let verdict = match refuted {
        Some((omega, row, col)) => DominanceVerdict::Refuted { omega, row, col },
        None if rolls_off => DominanceVerdict::Dominated,
        None => DominanceVerdict::InconclusiveGridPass,
    };
    Ok(DominanceReport { verdict, entries, grid: GridDescription { lo, hi, points, refinements } })
}

/// Golden-section search for the largest `|m_ik|` on `[a, b]` in log
/// frequency, stopped when the bracket is below `1e-4` relative.
fn refine_peak(sys: &StateSpaceSystem, i: usize, k: usize, a: f64, b: f64) -> Result<(f64, f64, usize)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let f = |w: f64| freq_response(sys, w).map(|h| h[(i, k)].norm());
    let (mut lo, mut hi) = (a.ln(), b.ln());
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1.exp())?;
    let mut f2 = f(x2.exp())?;
    let mut evals = 2;
    while hi - lo > 1e-4 && evals < 200 {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1.exp())?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2.exp())?;
        }
        evals += 1;
    }
    Ok(if f1 >= f2 { (x1.exp(), f1, evals) } else { (x2.exp(), f2, evals) })
}

/// How positive dominance enters the robust stability test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DominanceMode {
    /// Run [`check_positive_dominance`]; a refutation is an error.
    Verify { grid: GridSpec, tol: f64 },
    /// The caller vouches for dominance; nothing is checked.
    Assumed,
}

impl Default for DominanceMode {
    fn default() -> Self {
        DominanceMode::Verify { grid: GridSpec::default(), tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RobustOptions {
    pub mu: MuOptions,
    pub dominance: DominanceMode,
}

/// Zero-frequency destabilizing perturbation: `M(0) delta q = q`.
#[derive(Debug, Clone)]
pub struct Destabilizer {
    /// Block perturbation on the original structure, canonical block order.
    pub perturbation: StructuredPerturbation,
    /// The same perturbation as a matrix in the input order of the structure.
    pub delta: DMatrix<f64>,
    /// Unit nonnegative vector, input order.
    pub q: DVector<f64>,
    pub omega: f64,
}

#[derive(Debug, Clone)]
pub enum RobustVerdict {
    RobustlyStable { mu: f64, theta_star: Vec<f64> },
    NotRobust { mu: f64, witness: Destabilizer },
    /// `|mu - 1| <= tol`, or `mu > 1 + tol` without a certified destabilizer.
    Marginal { mu: f64, lower: f64, theta_star: Vec<f64>, witness: Option<Destabilizer> },
}

#[derive(Debug, Clone)]
pub struct RobustReport {
    pub verdict: RobustVerdict,
    pub mu: MuResult,
    pub static_gain: DMatrix<f64>,
    pub dominance: Option<DominanceReport>,
    pub dominance_assumed: bool,
}

/// Entries above `-slack` are clipped to zero; anything lower is rejected.
fn nonneg_gain(g: &DMatrix<f64>) -> Result<NonnegMatrix> {
    let slack = 1e-12 * (1.0 + g.amax());
    if let Some((idx, &v)) = g.iter().enumerate().find(|(_, &v)| v < -slack) {
        let (i, j) = (idx % g.nrows(), idx / g.nrows());
        return Err(Error::InvalidInput(format!(
            "static gain entry ({i}, {j}) = {v} is negative; the system cannot be positively dominated"
        )));
    }
    NonnegMatrix::new(g.map(|x| x.max(0.0)))
}

/// Robust stability against `Delta` of the given structure with `|Delta|_inf <= 1`,
/// decided from `mu` of the static gain.
pub fn robust_stability(sys: &StateSpaceSystem, s: &BlockStructure, opts: &RobustOptions) -> Result<RobustReport> {
    if s.total_dim() != sys.io_dim() {
        return Err(Error::DimensionMismatch(format!(
            "structure covers {} channels, the system has {}",
            s.total_dim(),
            sys.io_dim()
        )));
    }
    check_hurwitz(&sys.a)?;
    let (dominance, dominance_assumed) = match opts.dominance {
        DominanceMode::Verify { grid, tol } => {
            let report = check_positive_dominance(sys, grid, tol)?;
            if let DominanceVerdict::Refuted { omega, row, col } = report.verdict {
                return Err(Error::DominanceRefuted { omega, row, col });
            }
            (Some(report), false)
        }
        DominanceMode::Assumed => (None, true),
    };
    let gain = static_gain(sys)?;
    let canonical = nonneg_gain(&s.to_canonical(&gain)?)?;
    let reduced = reduce_structure(s);
    let mu = mu_core::mu_nonneg(&canonical, &reduced, &opts.mu)?;
    let tol = opts.mu.tol;
    let theta_star = mu.theta_star.as_slice().to_vec();

    let verdict = if mu.mu < 1.0 - tol {
        RobustVerdict::RobustlyStable { mu: mu.mu, theta_star }
    } else {
        let witness = destabilizer(&canonical, &mu, s)?;
        match witness {
            Some(w) if mu.mu > 1.0 + tol => RobustVerdict::NotRobust { mu: mu.mu, witness: w },
            witness => RobustVerdict::Marginal { mu: mu.mu, lower: mu.lower, theta_star, witness },
        }
    };
    Ok(RobustReport { verdict, mu, static_gain: gain, dominance, dominance_assumed })
}

/// Builds the nonnegative destabilizer from the lower-bound witness when
/// that witness reaches `rho >= 1`.
fn destabilizer(m: &NonnegMatrix, mu: &MuResult, s: &BlockStructure) -> Result<Option<Destabilizer>> {
    let Some(w) = &mu.witness else { return Ok(None) };
    if mu.lower < 1.0 - crate::structure::WITNESS_RHO_SLACK {
        return Ok(None);
    }
    let lifted = lift_to_original(&w.perturbation, &mu.structure, s)?;
    let (dtilde, q) = nonnegative_witness(m.matrix(), &lifted)?;
    let delta_canonical = dtilde.assemble_real().expect("nonnegative witness is real");
    Ok(Some(Destabilizer {
        delta: s.to_input(&delta_canonical)?,
        q: s.vector_to_input(&q),
        perturbation: dtilde,
        omega: 0.0,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub omega: f64,
    pub upper: f64,
}

/// Scaling upper bound `inf_Theta sigma_max(Theta^{1/2} M(j omega) Theta^{-1/2})`
/// at each frequency, computed on the real lifting of `M(j omega)`.
/// Diagnostic only.
pub fn frequency_sweep_mu(
    sys: &StateSpaceSystem,
    s: &BlockStructure,
    frequencies: &[f64],
    opts: &MuOptions,
) -> Result<Vec<SweepPoint>> {
    if s.total_dim() != sys.io_dim() {
        return Err(Error::DimensionMismatch(format!(
            "structure covers {} channels, the system has {}",
            s.total_dim(),
            sys.io_dim()
        )));
    }
    check_hurwitz(&sys.a)?;
    let reduced = reduce_structure(s);
    let groups = reduced.groups();
    let lifted_groups: Vec<usize> = groups.iter().chain(groups.iter()).copied().collect();
    frequencies
        .iter()
        .map(|&omega| {
            let h = s.to_canonical(&freq_response(sys, omega)?)?;
            let real = h.iter().all(|z| z.im == 0.0);
            let upper = if real && h.iter().all(|z| z.re >= 0.0) {
                let m = NonnegMatrix::new(h.map(|z| z.re))?;
                mu_core::mu_upper(&m, &reduced, opts)?.ub
            } else {
                let lifted = linalg::lift_complex(&h);
                let problem = engine::ScalingProblem::new(&lifted, lifted_groups.clone());
                let rho = linalg::spectral_radius_c(&h);
                problem.minimize(rho, opts.tol, &opts.engine)?.value
            };
            Ok(SweepPoint { omega, upper })
        })
        .collect()
}

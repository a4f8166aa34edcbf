//! Independent verification machinery for the mu computation.
//!
//! * [`mu_lower_dyad`]: lower bound by ascent over nonnegative dyads.
//! * [`q_feasibility_search`]: searches the nonnegative unit sphere for a `q`
//!   with every block quadratic `phi_k(q) >= 0`, which refutes `mu < 1`.
//! * [`positive_qp_relaxation`]: semidefinite relaxation of a Metzler
//!   quadratic program and rank-one extraction from its diagonal.
//! * [`mu_bruteforce`]: exhaustive grid over dyad parameters for tiny cases.
//! * [`sample_unit_boundary`]: random perturbations on the unit sphere of a
//!   structure, used for falsification.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::mu_core::engine::Localizer;
use crate::mu_core::NonnegMatrix;
use crate::structure::{
    BlockKind, BlockStructure, Field, PerturbationBlock, ReducedStructure, StructuredPerturbation,
};

/// Stride between per-restart seeds.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub(crate) fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(SEED_STRIDE.wrapping_mul(index as u64 + 1)))
}

/// Slack accepted on `min_k phi_k(q) >= 0` when declaring a refutation.
pub const PHI_SLACK: f64 = 1e-12;

/// Block quadratics `phi_k(q) = |E_k M q|^2 - |E_k q|^2`.
#[derive(Debug, Clone)]
pub struct FeasibilityInstance {
    m: DMatrix<f64>,
    groups: Vec<usize>,
    /// `M_k = M^T E_k^T E_k M - E_k^T E_k`.
    forms: Vec<DMatrix<f64>>,
}

impl FeasibilityInstance {
    pub fn new(m: &NonnegMatrix, s: &ReducedStructure) -> Result<Self> {
        s.check_dim(m.dim())?;
        let groups = s.groups();
        let n = m.dim();
        let forms = (0..s.num_blocks())
            .map(|k| {
                let sel = DMatrix::from_fn(n, n, |i, j| if i == j && groups[i] == k { 1.0 } else { 0.0 });
                m.matrix().transpose() * &sel * m.matrix() - sel
            })
            .collect();
        Ok(Self { m: m.matrix().clone(), groups, forms })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn num_blocks(&self) -> usize {
        self.forms.len()
    }

    pub fn forms(&self) -> &[DMatrix<f64>] {
        &self.forms
    }

    fn phi_unchecked(&self, q: &DVector<f64>) -> Vec<f64> {
        let mq = &self.m * q;
        let mut out = vec![0.0; self.forms.len()];
        for (i, &g) in self.groups.iter().enumerate() {
            out[g] += mq[i] * mq[i] - q[i] * q[i];
        }
        out
    }

    fn min_phi(&self, q: &DVector<f64>) -> (f64, usize) {
        self.phi_unchecked(q)
            .into_iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |best, (k, v)| if v < best.0 { (v, k) } else { best })
    }
}

/// Evaluates every `phi_k` at a nonnegative unit vector.
pub fn phi(inst: &FeasibilityInstance, q: &DVector<f64>) -> Result<Vec<f64>> {
    if q.len() != inst.dim() {
        return Err(Error::DimensionMismatch(format!("q has length {}, expected {}", q.len(), inst.dim())));
    }
    if q.iter().any(|&x| x < 0.0) {
        return Err(Error::InvalidInput("q must be nonnegative".into()));
    }
    if (q.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("q must have unit norm, |q| = {}", q.norm())));
    }
    Ok(inst.phi_unchecked(q))
}

#[derive(Debug, Clone, PartialEq)]
pub enum QSearch {
    Found(DVector<f64>),
    NotFound { best: f64 },
}

fn project_sphere(v: DVector<f64>) -> Option<DVector<f64>> {
    let clipped = v.map(|x| x.max(0.0));
    let n = clipped.norm();
    (n > 0.0 && n.is_finite()).then(|| clipped / n)
}

/// Projected ascent on `min_k phi_k(q)` over the nonnegative unit sphere.
///
/// The first restart starts from the Perron vector of `M`, the rest from
/// uniform random nonnegative vectors. Steps follow the gradient of the
/// active quadratic (smallest index at ties) with backtracking; when that
/// direction cannot improve (a kink between active quadratics) a
/// softmin-weighted combination of the near-active gradients is tried.
pub fn q_feasibility_search(inst: &FeasibilityInstance, restarts: usize, iters: usize, seed: u64) -> QSearch {
    let n = inst.dim();
    let mut overall = f64::NEG_INFINITY;
    for r in 0..restarts.max(1) {
        let start = if r == 0 {
            let root = linalg::perron_root(&inst.m);
            linalg::perron_vector(&inst.m, root)
        } else {
            let mut rng = restart_rng(seed, r);
            DVector::from_fn(n, |_, _| rng.random::<f64>())
        };
        let Some(mut q) = project_sphere(start) else { continue };
        let (mut h, _) = inst.min_phi(&q);
        let mut step = 1.0;
        for _ in 0..iters {
            if h >= -PHI_SLACK {
                return QSearch::Found(q);
            }
            let (_, active) = inst.min_phi(&q);
            let g_active = &inst.forms[active] * &q * 2.0;
            let moved = ascend(inst, &q, h, &g_active, &mut step).or_else(|| {
                let values = inst.phi_unchecked(&q);
                let spread = values.iter().map(|v| v - h).fold(0.0, f64::max);
                let temp = (1e-3 * spread).max(1e-14);
                let mut dir = DVector::zeros(n);
                for (k, v) in values.iter().enumerate() {
                    let w = (-(v - h) / temp).exp();
                    if w > 1e-12 {
                        dir += &inst.forms[k] * &q * (2.0 * w);
                    }
                }
                step = 1.0;
                ascend(inst, &q, h, &dir, &mut step)
            });
            match moved {
                Some((q_new, h_new)) => {
                    q = q_new;
                    h = h_new;
                }
                None => break,
            }
        }
        if h >= -PHI_SLACK {
            return QSearch::Found(q);
        }
        overall = overall.max(h);
    }
    QSearch::NotFound { best: overall }
}

fn ascend(
    inst: &FeasibilityInstance,
    q: &DVector<f64>,
    h: f64,
    dir: &DVector<f64>,
    step: &mut f64,
) -> Option<(DVector<f64>, f64)> {
    let norm = dir.norm();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    let dir = dir / norm;
    let mut t = (*step * 2.0).min(1.0);
    while t > 1e-14 {
        if let Some(cand) = project_sphere(q + &dir * t) {
            let (hc, _) = inst.min_phi(&cand);
            if hc > h {
                *step = t;
                return Some((cand, hc));
            }
        }
        t *= 0.5;
    }
    None
}

#[derive(Debug, Clone)]
pub struct LowerBound {
    pub lb: f64,
    pub perturbation: StructuredPerturbation,
}

struct Dyads {
    left: Vec<DVector<f64>>,
    right: Vec<DVector<f64>>,
}

impl Dyads {
    fn assemble(&self, offsets: &[usize], n: usize) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(n, n);
        for (k, (l, r)) in self.left.iter().zip(&self.right).enumerate() {
            let o = offsets[k];
            d.view_mut((o, o), (l.len(), l.len())).copy_from(&(l * r.transpose()));
        }
        d
    }
}

fn unit_or_uniform(v: DVector<f64>) -> DVector<f64> {
    let v = v.map(f64::abs);
    let n = v.norm();
    if n > 0.0 && n.is_finite() {
        v / n
    } else {
        DVector::from_element(v.len(), 1.0 / (v.len() as f64).sqrt())
    }
}

/// Lower bound on mu by coordinate ascent over nonnegative unit-norm dyads
/// `Delta_k = xi_k zeta_k^T`.
///
/// Block `k` is updated to the dyad that maximizes the first-order change of
/// `rho(M Delta)`: `xi_k ~ (M^T w)_k`, `zeta_k ~ q_k` with `q`, `w` the right
/// and left Perron vectors of `M Delta`; the update is kept only if the
/// spectral radius grows. Restart 0 starts from the top singular pair of `M`
/// split by blocks (exact for a single full block), the rest from uniform
/// random nonnegative vectors.
pub fn mu_lower_dyad(
    m: &NonnegMatrix,
    s: &ReducedStructure,
    restarts: usize,
    iters: usize,
    seed: u64,
) -> Result<LowerBound> {
    s.check_dim(m.dim())?;
    let n = m.dim();
    let mat = m.matrix();
    let offsets = s.offsets();
    let sizes = s.sizes();
    let mt = mat.transpose();
    let rho_of = |d: &DMatrix<f64>| linalg::perron_root(&(mat * d));

    let mut best: Option<(f64, DMatrix<f64>)> = None;
    for r in 0..restarts.max(1) {
        let mut dyads = if r == 0 {
            let (_, u, v) = linalg::top_singular_pair(mat);
            Dyads {
                left: offsets.iter().zip(sizes).map(|(&o, &k)| unit_or_uniform(v.rows(o, k).into_owned())).collect(),
                right: offsets.iter().zip(sizes).map(|(&o, &k)| unit_or_uniform(u.rows(o, k).into_owned())).collect(),
            }
        } else {
            let mut rng = restart_rng(seed, r);
            let mut draw = |k: usize| unit_or_uniform(DVector::from_fn(k, |_, _| rng.random::<f64>()));
            let left = sizes.iter().map(|&k| draw(k)).collect();
            let right = sizes.iter().map(|&k| draw(k)).collect();
            Dyads { left, right }
        };
        let mut d = dyads.assemble(&offsets, n);
        let mut rho = rho_of(&d);
        for _ in 0..iters {
            let mut improved = false;
            for k in 0..sizes.len() {
                let loop_gain = mat * &d;
                let q = linalg::perron_vector(&loop_gain, rho);
                let w = linalg::perron_vector(&loop_gain.transpose(), rho);
                let a = (&mt * &w).rows(offsets[k], sizes[k]).into_owned();
                let b = q.rows(offsets[k], sizes[k]).into_owned();
                if a.norm() == 0.0 || b.norm() == 0.0 {
                    continue;
                }
                let old = (dyads.left[k].clone(), dyads.right[k].clone());
                dyads.left[k] = unit_or_uniform(a);
                dyads.right[k] = unit_or_uniform(b);
                let cand = dyads.assemble(&offsets, n);
                let cand_rho = rho_of(&cand);
                if cand_rho > rho * (1.0 + 1e-13) {
                    rho = cand_rho;
                    d = cand;
                    improved = true;
                } else {
                    dyads.left[k] = old.0;
                    dyads.right[k] = old.1;
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| rho > *b) {
            best = Some((rho, d));
        }
    }
    let (_, d) = best.expect("at least one restart");
    let blocks = offsets
        .iter()
        .zip(sizes)
        .map(|(&o, &k)| d.view((o, o), (k, k)).into_owned())
        .collect();
    let perturbation = StructuredPerturbation::from_reduced(s, blocks)?;
    // re-evaluated from the returned perturbation
    let lb = rho_of(&perturbation.assemble_real().expect("real dyads"));
    Ok(LowerBound { lb, perturbation })
}

/// Quadratic program with Metzler data:
/// maximize `x^T M_0 x` subject to `x^T M_i x >= b_i` (and `|x| = 1` when
/// `trace_normalized`).
#[derive(Debug, Clone)]
pub struct QPInstance {
    objective: DMatrix<f64>,
    constraints: Vec<(DMatrix<f64>, f64)>,
    trace_normalized: bool,
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= 1e-12 * scale
}

fn is_metzler(a: &DMatrix<f64>) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] >= 0.0))
}

impl QPInstance {
    pub fn new(
        objective: DMatrix<f64>,
        constraints: Vec<(DMatrix<f64>, f64)>,
        trace_normalized: bool,
    ) -> Result<Self> {
        let n = linalg::require_square(&objective, "objective")?;
        let all = std::iter::once(&objective).chain(constraints.iter().map(|(a, _)| a));
        for (i, a) in all.enumerate() {
            if a.nrows() != n || a.ncols() != n {
                return Err(Error::DimensionMismatch(format!("matrix {i} is not {n}x{n}")));
            }
            linalg::require_finite(a, "QP data")?;
            if !is_symmetric(a) {
                return Err(Error::InvalidInput(format!("matrix {i} is not symmetric")));
            }
            if !is_metzler(a) {
                return Err(Error::InvalidInput(format!("matrix {i} is not Metzler")));
            }
        }
        if constraints.iter().any(|(_, b)| !b.is_finite()) {
            return Err(Error::InvalidInput("non-finite constraint bound".into()));
        }
        Ok(Self { objective, constraints, trace_normalized })
    }

    pub fn dim(&self) -> usize {
        self.objective.nrows()
    }

    pub fn objective(&self) -> &DMatrix<f64> {
        &self.objective
    }

    pub fn constraints(&self) -> &[(DMatrix<f64>, f64)] {
        &self.constraints
    }

    pub fn trace_normalized(&self) -> bool {
        self.trace_normalized
    }
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    /// Absolute-or-relative accuracy of the relaxation value.
    pub tol: f64,
    pub max_iter: usize,
    /// Entry bound for instances without the trace normalization.
    pub radius: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200_000, radius: 1e4 }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    /// Relaxation value `tr(M_0 X*)`.
    pub value: f64,
    pub x_matrix: DMatrix<f64>,
    /// `x_i = sqrt(X*_ii)`.
    pub x: DVector<f64>,
    pub iterations: usize,
}

/// Affine parametrization of symmetric `X` by its upper triangle, with the
/// last diagonal entry eliminated when the trace is fixed to one.
struct SvecMap {
    n: usize,
    pairs: Vec<(usize, usize)>,
    trace_normalized: bool,
}

impl SvecMap {
    fn new(n: usize, trace_normalized: bool) -> Self {
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i..n {
                if !(trace_normalized && i == n - 1 && j == n - 1) {
                    pairs.push((i, j));
                }
            }
        }
        Self { n, pairs, trace_normalized }
    }

    fn dim(&self) -> usize {
        self.pairs.len()
    }

    fn matrix(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.n;
        let mut x = DMatrix::zeros(n, n);
        for (&(i, j), &v) in self.pairs.iter().zip(y) {
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
        if self.trace_normalized {
            let partial: f64 = (0..n - 1).map(|i| x[(i, i)]).sum();
            x[(n - 1, n - 1)] = 1.0 - partial;
        }
        x
    }

    fn point(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.pairs.iter().map(|&(i, j)| x[(i, j)]).collect()
    }

    /// `tr(A X(y)) = constant + coefficients . y`.
    fn functional(&self, a: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let n = self.n;
        let last = if self.trace_normalized { a[(n - 1, n - 1)] } else { 0.0 };
        let coeffs = self
            .pairs
            .iter()
            .map(|&(i, j)| if i == j { a[(i, i)] - last } else { 2.0 * a[(i, j)] })
            .collect();
        (last, coeffs)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the semidefinite relaxation `max tr(M_0 X)` s.t. `tr(M_i X) >= b_i`,
/// `X >= 0` (plus `tr X = 1` if requested) with the ellipsoid method, the PSD
/// constraint enforced by eigenvector cuts `w^T X w >= 0`, and extracts
/// `x = sqrt(diag X*)`.
pub fn positive_qp_relaxation(inst: &QPInstance, opts: &QpOptions) -> Result<QpSolution> {
    let n = inst.dim();
    let map = SvecMap::new(n, inst.trace_normalized);
    let dim = map.dim();
    let (obj_c, obj_g) = map.functional(&inst.objective);
    let cons: Vec<(f64, Vec<f64>, f64)> = inst
        .constraints
        .iter()
        .map(|(a, b)| {
            let (c, g) = map.functional(a);
            (c, g, *b)
        })
        .collect();
    let psd_slack = |x: &DMatrix<f64>| 1e-12 * x.trace().abs().max(1.0);
    let constraint_slack = |b: f64| 1e-12 * b.abs().max(1.0);

    let finish = |y: &[f64], iterations: usize| {
        let x_matrix = map.matrix(y);
        let value = obj_c + dot(&obj_g, y);
        let x = DVector::from_fn(n, |i, _| x_matrix[(i, i)].max(0.0).sqrt());
        QpSolution { value, x_matrix, x, iterations }
    };

    if dim == 0 {
        let y: Vec<f64> = Vec::new();
        let x = map.matrix(&y);
        for (c, g, b) in &cons {
            if c + dot(g, &y) < b - constraint_slack(*b) {
                return Err(Error::Infeasible("the relaxation has no feasible point".into()));
            }
        }
        if linalg::sym_min_eig(&x).0 < -psd_slack(&x) {
            return Err(Error::Infeasible("the relaxation has no feasible point".into()));
        }
        return Ok(finish(&y, 0));
    }

    let (mut center, radius, bound) = if inst.trace_normalized {
        let x0 = DMatrix::identity(n, n) / n as f64;
        (map.point(&x0), 2.0 * (dim as f64).sqrt(), None)
    } else {
        (vec![0.0; dim], opts.radius * (dim as f64).sqrt(), Some(opts.radius))
    };
    let mut loc = if dim == 1 {
        Localizer::Interval { lo: center[0] - radius, hi: center[0] + radius }
    } else {
        Localizer::Ellipsoid { p: DMatrix::identity(dim, dim) * (radius * radius) }
    };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for iter in 1..=opts.max_iter {
        // (g, h): keep {y : g . (y - c) <= -h}
        let mut cut: Option<(Vec<f64>, f64)> = None;
        if let Some(r) = bound {
            if let Some(i) = (0..dim).find(|&i| center[i].abs() > r) {
                let mut g = vec![0.0; dim];
                g[i] = center[i].signum();
                cut = Some((g, center[i].abs() - r));
            }
        }
        if cut.is_none() {
            for (c, g, b) in &cons {
                let v = c + dot(g, &center);
                if v < b - constraint_slack(*b) {
                    cut = Some((g.iter().map(|x| -x).collect(), b - v));
                    break;
                }
            }
        }
        if cut.is_none() {
            let x = map.matrix(&center);
            let (lmin, w) = linalg::sym_min_eig(&x);
            if lmin < -psd_slack(&x) {
                let (c, g) = map.functional(&(&w * w.transpose()));
                cut = Some((g.iter().map(|x| -x).collect(), -(c + dot(&g, &center))));
            }
        }
        let feasible = cut.is_none();
        let (g, h) = match cut {
            Some(c) => c,
            None => {
                let value = obj_c + dot(&obj_g, &center);
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, center.clone()));
                }
                let best_value = best.as_ref().map(|b| b.0).expect("just set");
                let g: Vec<f64> = obj_g.iter().map(|x| -x).collect();
                let width = loc.support(&g);
                if width <= opts.tol * best_value.abs().max(1.0) {
                    break;
                }
                (g, best_value - value)
            }
        };
        if !loc.cut(&mut center, &g, h) || loc.size() < 1e-13 {
            if best.is_none() {
                return Err(Error::Infeasible("the relaxation has no feasible point".into()));
            }
            break;
        }
        if iter == opts.max_iter && !feasible && best.is_none() {
            return Err(Error::Numerical("relaxation solver exhausted its iteration budget".into()));
        }
    }
    let Some((_, y)) = best else {
        return Err(Error::Numerical("relaxation solver exhausted its iteration budget".into()));
    };
    if let Some(r) = bound {
        if y.iter().any(|v| v.abs() >= 0.99 * r) {
            return Err(Error::Unbounded(format!(
                "relaxation optimum reaches the entry bound {r}; the objective appears unbounded"
            )));
        }
    }
    Ok(finish(&y, opts.max_iter))
}

/// Number of grid parameters used by [`mu_bruteforce`] for a structure.
pub fn bruteforce_param_count(s: &ReducedStructure) -> usize {
    s.sizes().iter().map(|&k| if k == 1 { 1 } else { 2 * (k - 1) }).sum()
}

/// Largest `rho(M Delta)` over a grid of nonnegative perturbations: scalar
/// grids on `[0, 1]` for 1x1 blocks, angle grids for the unit nonnegative
/// vectors of a dyad otherwise. A certified lower bound on mu.
pub fn mu_bruteforce(m: &NonnegMatrix, s: &ReducedStructure, grid: usize) -> Result<f64> {
    s.check_dim(m.dim())?;
    let params = bruteforce_param_count(s);
    if m.dim() > 4 || params > 6 {
        return Err(Error::InvalidInput(format!(
            "brute force limited to m <= 4 and 6 parameters (m = {}, parameters = {params})",
            m.dim()
        )));
    }
    if grid < 2 {
        return Err(Error::InvalidInput("grid needs at least 2 points".into()));
    }
    if (grid as f64).powi(params as i32) > 5e7 {
        return Err(Error::InvalidInput(format!("grid of {grid}^{params} points is too large")));
    }
    let n = m.dim();
    let offsets = s.offsets();
    let sizes = s.sizes();
    let mut idx = vec![0usize; params];
    let mut best = 0.0f64;
    let step = |i: usize| i as f64 / (grid - 1) as f64;
    loop {
        let mut d = DMatrix::zeros(n, n);
        let mut p = 0;
        for (k, &size) in sizes.iter().enumerate() {
            let o = offsets[k];
            if size == 1 {
                d[(o, o)] = step(idx[p]);
                p += 1;
            } else {
                let left = sphere_point(&idx[p..p + size - 1], step);
                let right = sphere_point(&idx[p + size - 1..p + 2 * (size - 1)], step);
                d.view_mut((o, o), (size, size)).copy_from(&(left * right.transpose()));
                p += 2 * (size - 1);
            }
        }
        best = best.max(linalg::perron_root(&(m.matrix() * d)));
        // odometer
        let mut pos = 0;
        loop {
            if pos == params {
                return Ok(best);
            }
            idx[pos] += 1;
            if idx[pos] < grid {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Unit nonnegative vector from hyperspherical angles in `[0, pi/2]`.
fn sphere_point(angles: &[usize], step: impl Fn(usize) -> f64) -> DVector<f64> {
    let k = angles.len() + 1;
    let mut v = DVector::zeros(k);
    let mut tail = 1.0;
    for (i, &a) in angles.iter().enumerate() {
        let phi = step(a) * std::f64::consts::FRAC_PI_2;
        v[i] = tail * phi.cos();
        tail *= phi.sin();
    }
    v[k - 1] = tail;
    v
}

/// How perturbations on the unit sphere are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Nonnegative dyads and nonnegative scalars.
    Nonnegative,
    /// Real Gaussian full blocks, signed scalars; complex blocks stay complex.
    SignMixed,
}

/// Random perturbation with every block of norm one.
pub fn sample_unit_boundary<R: Rng>(s: &BlockStructure, mode: SampleMode, rng: &mut R) -> StructuredPerturbation {
    let blocks = s
        .blocks()
        .iter()
        .map(|b| match (b.kind, mode) {
            (BlockKind::Full, SampleMode::Nonnegative) => {
                let l = unit_or_uniform(DVector::from_fn(b.size, |_, _| rng.random::<f64>()));
                let r = unit_or_uniform(DVector::from_fn(b.size, |_, _| rng.random::<f64>()));
                PerturbationBlock::Full(linalg::to_complex(&(l * r.transpose())))
            }
            (BlockKind::Full, SampleMode::SignMixed) => {
                let d = DMatrix::from_fn(b.size, b.size, |_, _| match b.field {
                    Field::Real => Complex64::new(rng.sample(StandardNormal), 0.0),
                    Field::Complex => Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)),
                });
                let norm = linalg::spectral_norm_c(&d);
                PerturbationBlock::Full(if norm > 0.0 { d / Complex64::new(norm, 0.0) } else { d })
            }
            (BlockKind::RepeatedScalar, SampleMode::Nonnegative) => PerturbationBlock::Scalar(Complex64::new(1.0, 0.0)),
            (BlockKind::RepeatedScalar, SampleMode::SignMixed) => match b.field {
                Field::Real => PerturbationBlock::Scalar(Complex64::new(
                    if rng.random::<bool>() { 1.0 } else { -1.0 },
                    0.0,
                )),
                Field::Complex => {
                    PerturbationBlock::Scalar(Complex64::from_polar(1.0, rng.random::<f64>() * std::f64::consts::TAU))
                }
            },
        })
        .collect();
    StructuredPerturbation::new(s, blocks).expect("sampled blocks match the structure")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::block_norm;

    fn nn(n: usize, data: &[f64]) -> NonnegMatrix {
        NonnegMatrix::from_row_slice(n, data).unwrap()
    }

    fn two_scalars() -> ReducedStructure {
        ReducedStructure::from_sizes(vec![1, 1]).unwrap()
    }

    #[test]
    fn phi_examples() {
        let s = two_scalars();
        let q = DVector::from_vec(vec![0.6, 0.8]);
        let inst = FeasibilityInstance::new(&nn(2, &[0.0; 4]), &s).unwrap();
        let v = phi(&inst, &q).unwrap();
        assert!((v[0] + 0.36).abs() < 1e-15 && (v[1] + 0.64).abs() < 1e-15);

        let inst = FeasibilityInstance::new(&nn(2, &[1.0, 0.0, 0.0, 1.0]), &s).unwrap();
        assert!(phi(&inst, &q).unwrap().iter().all(|x| x.abs() < 1e-15));

        let inst = FeasibilityInstance::new(&nn(2, &[0.0, 2.0, 0.0, 0.0]), &s).unwrap();
        let v = phi(&inst, &DVector::from_vec(vec![0.0, 1.0])).unwrap();
        assert_eq!(v, vec![4.0, -1.0]);

        assert!(phi(&inst, &DVector::from_vec(vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn forms_match_phi() {
        let s = ReducedStructure::from_sizes(vec![2, 1]).unwrap();
        let m = nn(3, &[0.2, 0.5, 0.1, 0.9, 0.0, 0.4, 0.3, 0.3, 0.7]);
        let inst = FeasibilityInstance::new(&m, &s).unwrap();
        let q = DVector::from_vec(vec![0.48, 0.6, 0.64]);
        let v = phi(&inst, &q).unwrap();
        for (k, f) in inst.forms().iter().enumerate() {
            assert!((q.dot(&(f * &q)) - v[k]).abs() < 1e-14);
            assert!((f - f.transpose()).amax() < 1e-15);
        }
    }

    #[test]
    fn search_examples() {
        let s = two_scalars();
        let inst = FeasibilityInstance::new(&nn(2, &[0.0; 4]), &s).unwrap();
        assert!(matches!(q_feasibility_search(&inst, 5, 100, 1), QSearch::NotFound { .. }));

        let inst = FeasibilityInstance::new(&nn(2, &[0.0, 1.0, 1.0, 0.0]), &s).unwrap();
        match q_feasibility_search(&inst, 5, 100, 1) {
            QSearch::Found(q) => {
                let h = std::f64::consts::FRAC_1_SQRT_2;
                assert!((q[0] - h).abs() < 1e-9 && (q[1] - h).abs() < 1e-9);
            }
            other => panic!("expected a refutation, got {other:?}"),
        }
    }

    #[test]
    fn dyad_lower_bound_examples() {
        let m = nn(2, &[1.0, 2.0, 0.5, 3.0]);
        let full = ReducedStructure::from_sizes(vec![2]).unwrap();
        let lb = mu_lower_dyad(&m, &full, 1, 50, 0).unwrap();
        assert!((lb.lb - linalg::spectral_norm(m.matrix())).abs() < 1e-10);

        let lb = mu_lower_dyad(&m, &two_scalars(), 3, 50, 0).unwrap();
        assert!((lb.lb - linalg::perron_root(m.matrix())).abs() < 1e-10);
        assert_eq!(lb.perturbation.assemble_real().unwrap(), DMatrix::identity(2, 2));

        let nil = nn(2, &[0.0, 1.0, 0.0, 0.0]);
        let lb = mu_lower_dyad(&nil, &two_scalars(), 3, 50, 0).unwrap();
        assert_eq!(lb.lb, 0.0);
    }

    #[test]
    fn dyad_witness_is_in_the_ball() {
        let m = nn(3, &[0.2, 0.5, 0.1, 0.9, 0.0, 0.4, 0.3, 0.3, 0.7]);
        let s = ReducedStructure::from_sizes(vec![2, 1]).unwrap();
        let lb = mu_lower_dyad(&m, &s, 10, 100, 3).unwrap();
        assert!(block_norm(&lb.perturbation) <= 1.0 + 1e-12);
        let fresh = linalg::perron_root(&(m.matrix() * lb.perturbation.assemble_real().unwrap()));
        assert!((fresh - lb.lb).abs() <= 1e-10);
    }

    #[test]
    fn relaxation_examples() {
        let one = QPInstance::new(DMatrix::from_element(1, 1, 2.0), vec![], true).unwrap();
        let sol = positive_qp_relaxation(&one, &QpOptions::default()).unwrap();
        assert_eq!(sol.value, 2.0);
        assert_eq!(sol.x[0], 1.0);

        let perm = QPInstance::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), vec![], true).unwrap();
        let sol = positive_qp_relaxation(&perm, &QpOptions::default()).unwrap();
        assert!((sol.value - 1.0).abs() < 1e-6);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((sol.x[0] - h).abs() < 1e-3 && (sol.x[1] - h).abs() < 1e-3);

        let infeasible = QPInstance::new(
            DMatrix::identity(2, 2),
            vec![(DMatrix::identity(2, 2), 2.0)],
            true,
        )
        .unwrap();
        assert!(matches!(
            positive_qp_relaxation(&infeasible, &QpOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn relaxation_detects_unbounded() {
        let inst = QPInstance::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), vec![], false).unwrap();
        assert!(matches!(
            positive_qp_relaxation(&inst, &QpOptions { radius: 10.0, ..QpOptions::default() }),
            Err(Error::Unbounded(_))
        ));
    }

    #[test]
    fn qp_rejects_non_metzler() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0]);
        assert!(QPInstance::new(a, vec![], true).is_err());
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.0]);
        assert!(QPInstance::new(a, vec![], true).is_err());
    }

    #[test]
    fn bruteforce_examples() {
        let s = two_scalars();
        let m = nn(2, &[1.0, 2.0, 3.0, 4.0]);
        let v = mu_bruteforce(&m, &s, 101).unwrap();
        assert!((v - (5.0 + 33f64.sqrt()) / 2.0).abs() < 1e-10);
        assert!((mu_bruteforce(&nn(2, &[1.0, 0.0, 0.0, 1.0]), &s, 11).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mu_bruteforce(&nn(2, &[0.0; 4]), &s, 11).unwrap(), 0.0);
        let big = ReducedStructure::from_sizes(vec![5]).unwrap();
        assert!(mu_bruteforce(&NonnegMatrix::new(DMatrix::zeros(5, 5)).unwrap(), &big, 3).is_err());
    }

    #[test]
    fn samples_have_unit_blocks() {
        let s = BlockStructure::new(vec![
            crate::structure::BlockSpec::full(2, Field::Complex),
            crate::structure::BlockSpec::scalar(2, Field::Real),
        ])
        .unwrap();
        let mut rng = restart_rng(7, 0);
        for mode in [SampleMode::Nonnegative, SampleMode::SignMixed] {
            for _ in 0..20 {
                let d = sample_unit_boundary(&s, mode, &mut rng);
                assert!((block_norm(&d) - 1.0).abs() < 1e-12);
            }
        }
    }
}

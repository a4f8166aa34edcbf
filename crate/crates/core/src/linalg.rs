//! Dense linear-algebra helpers shared by the analysis modules.
//!
//! Everything here works on small dense `nalgebra` matrices. Complex matrices
//! are handled either natively (SVD) or through the real lifting
//! `[[Re, -Im], [Im, Re]]`, whose singular values are those of the complex
//! matrix (each repeated twice) and whose eigenvalues are the complex
//! eigenvalues together with their conjugates.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Entries smaller than this (relative) are treated as zero by the Perron routines.
const PERRON_ZERO: f64 = 1e-300;

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub fn is_nonnegative(m: &DMatrix<f64>) -> bool {
    m.iter().all(|&x| x >= 0.0)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Largest singular value of a complex matrix.
pub fn spectral_norm_c(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

/// Top singular triple `(sigma, u, v)` with `m v = sigma u`.
pub fn top_singular_pair(m: &DMatrix<f64>) -> (f64, DVector<f64>, DVector<f64>) {
    let svd = m.clone().svd(true, true);
    let (idx, sigma) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best });
    let u = svd.u.as_ref().expect("u requested").column(idx).into_owned();
    let v = svd.v_t.as_ref().expect("v_t requested").row(idx).transpose();
    (sigma, u, v)
}

/// Real lifting `[[Re, -Im], [Im, Re]]` of a complex matrix.
pub fn lift_complex(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
            out[(i + r, j + c)] = z.re;
        }
    }
    out
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

fn schur_cap(n: usize) -> usize {
    200 * n + 2000
}

/// Diagonal similarity used to knock a stalled QR iteration off its path.
fn reshuffle<T: nalgebra::ComplexField<RealField = f64> + Copy>(m: &DMatrix<T>) -> DMatrix<T> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * ((i * 7919) % 13) as f64 / 13.0).collect();
    DMatrix::from_fn(n, n, |i, j| m[(i, j)].scale(d[i] / d[j]))
}

fn complex_schur_eigenvalues(m: &DMatrix<Complex64>) -> Option<Vec<Complex64>> {
    let n = m.nrows();
    Schur::try_new(m.clone(), f64::EPSILON, schur_cap(n))
        .and_then(|s| s.eigenvalues())
        .map(|v| v.iter().copied().collect())
}

fn real_schur_eigenvalues(m: &DMatrix<f64>, cap: usize) -> Option<Vec<Complex64>> {
    Schur::try_new(m.clone(), f64::EPSILON, cap).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a real square matrix.
///
/// Real Schur form with a capped iteration count; a stalled iteration falls
/// back to the complex Schur form and then to a rescaled similar matrix.
/// NaN entries signal that every attempt stalled.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.is_empty() {
        return Vec::new();
    }
    let n = m.nrows();
    let mc = to_complex(m);
    real_schur_eigenvalues(m, schur_cap(n))
        .or_else(|| complex_schur_eigenvalues(&mc))
        .or_else(|| complex_schur_eigenvalues(&reshuffle(&mc)))
        .or_else(|| real_schur_eigenvalues(&reshuffle(m), 10 * schur_cap(n)))
        .unwrap_or_else(|| vec![Complex64::new(f64::NAN, f64::NAN); n])
}

/// Eigenvalues of a complex square matrix.
pub fn eigenvalues_c(m: &DMatrix<Complex64>) -> Vec<Complex64> {
    if m.is_empty() {
        return Vec::new();
    }
    let n = m.nrows();
    complex_schur_eigenvalues(m)
        .or_else(|| complex_schur_eigenvalues(&reshuffle(m)))
        .or_else(|| {
            // the real lifting carries every eigenvalue and its conjugate
            let lifted = eigenvalues(&lift_complex(m));
            lifted.iter().all(|z| z.re.is_finite()).then_some(lifted)
        })
        .unwrap_or_else(|| vec![Complex64::new(f64::NAN, f64::NAN); n])
}

fn max_or_nan(values: impl Iterator<Item = f64>) -> f64 {
    let mut out = f64::NEG_INFINITY;
    for v in values {
        if v.is_nan() {
            return f64::NAN;
        }
        out = out.max(v);
    }
    out
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    max_or_nan(eigenvalues(m).iter().map(|z| z.re))
}

/// Largest real part over the spectrum of a complex matrix.
pub fn spectral_abscissa_c(m: &DMatrix<Complex64>) -> f64 {
    max_or_nan(eigenvalues_c(m).iter().map(|z| z.re))
}

/// Spectral radius of a general real matrix from its Schur form.
pub fn spectral_radius_dense(m: &DMatrix<f64>) -> f64 {
    max_or_nan(eigenvalues(m).iter().map(|z| z.norm())).max(0.0)
}

/// Spectral radius of a complex matrix.
pub fn spectral_radius_c(m: &DMatrix<Complex64>) -> f64 {
    max_or_nan(eigenvalues_c(m).iter().map(|z| z.norm())).max(0.0)
}

/// Perron root of a nonnegative matrix.
///
/// Shifted power iteration from the all-ones vector, stopped once the
/// Collatz–Wielandt bracket `min (Bx)_i / x_i <= rho <= max (Bx)_i / x_i`
/// closes. Reducible matrices can starve the bracket (entries of the iterate
/// tend to zero); those fall back to the Schur spectrum.
pub fn perron_root(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let shift = m.amax();
    if shift == 0.0 {
        return 0.0;
    }
    let shifted = m + DMatrix::identity(n, n) * shift;
    let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    for _ in 0..2000 {
        let y = &shifted * &x;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            if x[i] <= PERRON_ZERO {
                lo = f64::NEG_INFINITY;
                hi = f64::INFINITY;
                break;
            }
            let r = y[i] / x[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        let norm = y.norm();
        if norm == 0.0 {
            break;
        }
        x = y / norm;
        if hi.is_finite() && lo.is_finite() && hi - lo <= 1e-13 * hi {
            return (0.5 * (lo + hi) - shift).max(0.0);
        }
    }
    spectral_radius_dense(m)
}

/// Nonnegative unit eigenvector for the Perron root `root` of `m >= 0`.
///
/// Inverse iteration with the shift placed just above the root: for
/// `t > rho(m)` the resolvent `(tI - m)^{-1}` is entrywise nonnegative, so the
/// iterates stay in the nonnegative orthant (rounding negatives are clipped).
/// This also converges on Jordan-type reducible matrices where plain power
/// iteration only creeps towards the eigenvector.
pub fn perron_vector(m: &DMatrix<f64>, root: f64) -> DVector<f64> {
    let n = m.nrows();
    let scale = root.max(m.amax()).max(PERRON_ZERO);
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    if m.amax() == 0.0 {
        return ones;
    }
    let t = root + 1e-11 * scale;
    let shifted = DMatrix::identity(n, n) * t - m;
    let lu = shifted.lu();
    let mut x = ones.clone();
    for _ in 0..8 {
        let Some(mut y) = lu.solve(&x) else {
            break;
        };
        y.apply(|v| *v = v.max(0.0));
        let norm = y.norm();
        if !norm.is_finite() || norm == 0.0 {
            break;
        }
        x = y / norm;
    }
    x
}

/// Largest eigenvalue and unit eigenvector of a symmetric matrix.
pub fn sym_max_eig(s: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(s.clone());
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best });
    (lambda, eig.eigenvectors.column(idx).into_owned())
}

/// Smallest eigenvalue and unit eigenvector of a symmetric matrix.
pub fn sym_min_eig(s: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let (l, v) = sym_max_eig(&(-s));
    (-l, v)
}

pub fn require_square(m: &DMatrix<f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn require_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if all_finite(m) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} has non-finite entries")))
    }
}

//! Random instance generators shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use posmu::fm::FmProblem;
use posmu::mu_core::{mu_nonneg, MuOptions, NonnegMatrix};
use posmu::structure::{BlockSpec, BlockStructure, Field, ReducedStructure};
use posmu::systems::StateSpaceSystem;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random::<f64>())
}

pub fn nonneg(rng: &mut impl Rng, m: usize) -> NonnegMatrix {
    NonnegMatrix::new(uniform(rng, m, m)).unwrap()
}

/// Random split of `m` into full blocks and 1x1 blocks.
pub fn partition(rng: &mut impl Rng, m: usize) -> ReducedStructure {
    let mut sizes = Vec::new();
    let mut left = m;
    while left > 0 {
        let s = rng.random_range(1..=left.min(3));
        sizes.push(s);
        left -= s;
    }
    ReducedStructure::from_sizes(sizes).unwrap()
}

/// Random canonical structure with full and repeated-scalar blocks, real or complex.
pub fn block_structure(rng: &mut impl Rng, m: usize, allow_complex: bool) -> BlockStructure {
    let mut blocks = Vec::new();
    let mut left = m;
    while left > 0 {
        let s = rng.random_range(1..=left.min(3));
        let field = if allow_complex && rng.random::<bool>() { Field::Complex } else { Field::Real };
        blocks.push(if rng.random::<bool>() { BlockSpec::full(s, field) } else { BlockSpec::scalar(s, field) });
        left -= s;
    }
    BlockStructure::new(blocks).unwrap()
}

/// Same as [`block_structure`] but always contains a repeated scalar of size >= 2
/// and a complex block.
pub fn mixed_structure(rng: &mut impl Rng, m: usize) -> BlockStructure {
    assert!(m >= 3);
    let mut blocks = vec![BlockSpec::scalar(2, Field::Complex)];
    let mut left = m - 2;
    while left > 0 {
        let s = rng.random_range(1..=left.min(2));
        let field = if rng.random::<bool>() { Field::Complex } else { Field::Real };
        blocks.push(if rng.random::<bool>() { BlockSpec::full(s, field) } else { BlockSpec::scalar(s, field) });
        left -= s;
    }
    BlockStructure::new(blocks).unwrap()
}

/// Metzler Hurwitz `A`, nonnegative `B`, `C`, `D`.
pub fn positive_system(rng: &mut impl Rng, n: usize, m: usize) -> StateSpaceSystem {
    let mut a = uniform(rng, n, n);
    let rowsum: Vec<f64> = (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| a[(i, j)]).sum()).collect();
    for i in 0..n {
        a[(i, i)] = -(rowsum[i] + 0.1 + rng.random::<f64>());
    }
    let b = uniform(rng, n, m);
    let c = uniform(rng, m, n);
    let d = uniform(rng, m, m) * 0.3;
    StateSpaceSystem::new(a, b, c, d, None).unwrap()
}

pub fn second_order(zeta: f64, wn: f64) -> StateSpaceSystem {
    StateSpaceSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, -2.0 * zeta * wn]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        DMatrix::from_row_slice(1, 2, &[wn * wn, 0.0]),
        DMatrix::zeros(1, 1),
        None,
    )
    .unwrap()
}

/// Random feasible FM instance (`rho(Psi G0) = 0.5`) with nonnegative `E`, `F`
/// over a random real structure.
pub fn fm_problem(rng: &mut impl Rng, n: usize) -> FmProblem {
    let r = rng.random_range(1..=n);
    let structure = block_structure(rng, r, false);
    let mut g0 = uniform(rng, n, n);
    for i in 0..n {
        g0[(i, i)] = 0.0;
    }
    let h = DVector::from_fn(n, |_, _| 0.5 + 0.5 * rng.random::<f64>());
    let nu = DVector::from_fn(n, |_, _| 0.1 + 0.9 * rng.random::<f64>());
    let k = DVector::from_fn(n, |_, _| 0.5 + 1.5 * rng.random::<f64>());
    let raw_gamma = DVector::from_fn(n, |_, _| 0.5 + rng.random::<f64>());
    let psi = raw_gamma.component_div(&h);
    let rho = posmu::linalg::perron_root(&DMatrix::from_fn(n, n, |i, j| psi[i] * g0[(i, j)]));
    let gamma = if rho > 0.0 { raw_gamma * (0.5 / rho) } else { raw_gamma };
    let e = uniform(rng, n, r);
    let f = uniform(rng, r, n);
    FmProblem::new(h, g0, nu, gamma, k, e, f, structure).unwrap()
}

/// Rescales `E` so that mu lands on `target`.
pub fn fm_with_mu(rng: &mut impl Rng, n: usize, target: f64, opts: &MuOptions) -> FmProblem {
    let p = fm_problem(rng, n);
    let mu = posmu::fm::robust_test(&p, opts).unwrap().mu();
    p.with_uncertainty_scale(target / mu).unwrap()
}

pub fn mu_of(m: &NonnegMatrix, s: &ReducedStructure) -> f64 {
    mu_nonneg(m, s, &MuOptions::default()).unwrap().mu
}

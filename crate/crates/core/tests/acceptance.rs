//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use posmu::fm::{self, Falsification};
use posmu::linalg;
use posmu::mu_core::{mu_nonneg, mu_upper, MuOptions};
use posmu::oracles::{self, sample_unit_boundary, QPInstance, QpOptions, SampleMode};
use posmu::structure::{dyad_interpolant, reduce_structure, ReducedStructure};
use posmu::systems::{self, DominanceVerdict, GridSpec, PositivityVerdict, RobustVerdict};
use rand::Rng;

use common::*;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tightness() -> Outcome {
    let mut rng = rng(1);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let m = rng.random_range(2..=6);
        let mat = nonneg(&mut rng, m);
        let s = partition(&mut rng, m);
        let ub = mu_upper(&mat, &s, &MuOptions::default()).map_err(|e| format!("case {case}: {e}"))?.ub;
        let lb = oracles::mu_lower_dyad(&mat, &s, 20, 200, case).map_err(|e| format!("case {case}: {e}"))?.lb;
        let rel = (ub - lb) / ub.max(1.0);
        worst = worst.max(rel);
        ensure(rel <= 1e-2, || format!("case {case}: ub {ub} lb {lb} sizes {:?}", s.sizes()))?;
    }
    Ok(format!("200 instances, worst relative gap {worst:.2e}"))
}

fn scalar_and_full_oracles() -> Outcome {
    let mut rng = rng(2);
    let (mut worst_s, mut worst_f) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let m = rng.random_range(2..=6);
        let mat = nonneg(&mut rng, m);
        let scalars = ReducedStructure::from_sizes(vec![1; m]).unwrap();
        let mu = mu_nonneg(&mat, &scalars, &MuOptions::default()).map_err(|e| format!("case {case}: {e}"))?.mu;
        let rho = linalg::perron_root(mat.matrix());
        let err = (mu - rho).abs() / rho.max(1.0);
        worst_s = worst_s.max(err);
        ensure(err <= 1e-5, || format!("case {case}: scalar mu {mu} vs rho {rho}"))?;

        let full = ReducedStructure::from_sizes(vec![m]).unwrap();
        let mu = mu_nonneg(&mat, &full, &MuOptions::default()).map_err(|e| format!("case {case}: {e}"))?.mu;
        let sigma = linalg::spectral_norm(mat.matrix());
        worst_f = worst_f.max((mu - sigma).abs());
        ensure((mu - sigma).abs() <= 1e-8, || format!("case {case}: full mu {mu} vs sigma {sigma}"))?;
    }
    Ok(format!("100 instances, scalar error {worst_s:.2e}, full-block error {worst_f:.2e}"))
}

fn homogeneity() -> Outcome {
    let mut rng = rng(3);
    let opts = MuOptions { tol: 1e-10, ..MuOptions::default() };
    let mut worst = 0.0f64;
    for case in 0..50 {
        let m = rng.random_range(2..=6);
        let mat = nonneg(&mut rng, m);
        let s = partition(&mut rng, m);
        let base = mu_nonneg(&mat, &s, &opts).map_err(|e| format!("case {case}: {e}"))?.mu;
        for alpha in [0.5, 2.0, 10.0] {
            let scaled = mu_nonneg(&mat.scale(alpha).unwrap(), &s, &opts).map_err(|e| format!("case {case}: {e}"))?.mu;
            let rel = (scaled - alpha * base).abs() / (alpha * base).max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            ensure(rel <= 1e-6, || format!("case {case}, alpha {alpha}: {scaled} vs {}", alpha * base))?;
        }
    }
    Ok(format!("50 instances x 3 scalings, worst relative error {worst:.2e}"))
}

fn reduction() -> Outcome {
    let mut rng = rng(4);
    let mut worst = f64::NEG_INFINITY;
    for case in 0..50 {
        let m = rng.random_range(3..=6);
        let s = mixed_structure(&mut rng, m);
        let mat = nonneg(&mut rng, m);
        let mu = mu_nonneg(&mat, &reduce_structure(&s), &MuOptions::default())
            .map_err(|e| format!("case {case}: {e}"))?
            .mu;
        let mc = linalg::to_complex(mat.matrix());
        for _ in 0..10_000 {
            let d = sample_unit_boundary(&s, SampleMode::SignMixed, &mut rng);
            let rho = linalg::spectral_radius_c(&(&mc * d.assemble()));
            worst = worst.max(rho - mu);
            ensure(rho <= mu + 1e-6, || format!("case {case}: sample rho {rho} > mu {mu} for {s}"))?;
        }
    }
    Ok(format!("50 structures x 1e4 samples, max rho - mu = {worst:.2e}"))
}

fn zero_frequency() -> Outcome {
    let mut rng = rng(5);
    let freqs = systems::log_grid(1e-3, 1e3, 50).unwrap();
    let opts = MuOptions { tol: 1e-9, ..MuOptions::default() };
    let mut worst = f64::NEG_INFINITY;
    for case in 0..50 {
        let n = rng.random_range(1..=8);
        let io = rng.random_range(1..=4);
        let sys = positive_system(&mut rng, n, io);
        let s = block_structure(&mut rng, io, true);
        let zero = systems::frequency_sweep_mu(&sys, &s, &[0.0], &opts).map_err(|e| format!("case {case}: {e}"))?[0].upper;
        let sweep = systems::frequency_sweep_mu(&sys, &s, &freqs, &opts).map_err(|e| format!("case {case}: {e}"))?;
        for p in sweep {
            worst = worst.max((p.upper - zero) / (1.0 + zero));
            ensure(p.upper <= zero + 1e-6 * (1.0 + zero), || {
                format!("case {case}: omega {} bound {} > zero-frequency {zero}", p.omega, p.upper)
            })?;
        }
    }
    Ok(format!("50 systems x 50 frequencies, max excess {worst:.2e}"))
}

fn fm_consistency() -> Outcome {
    let mut rng = rng(6);
    let opts = MuOptions::default();
    for case in 0..50 {
        let n = rng.random_range(2..=6);
        let target = rng.random_range(0.3..=0.9);
        let p = fm_with_mu(&mut rng, n, target, &opts);
        let r = fm::robust_test(&p, &opts).map_err(|e| format!("robust case {case}: {e}"))?;
        ensure(r.is_robust(), || format!("robust case {case}: mu {} not certified", r.mu()))?;
        match fm::falsify(&p, 10_000, case).map_err(|e| e.to_string())? {
            Falsification::NoneFound { .. } => {}
            Falsification::Destabilizer { sample, abscissa, .. } => {
                return Err(format!("robust case {case} (mu {}): sample {sample} has abscissa {abscissa}", r.mu()))
            }
        }
    }
    for case in 0..50 {
        let n = rng.random_range(2..=6);
        let target = rng.random_range(1.1..=2.0);
        let p = fm_with_mu(&mut rng, n, target, &opts);
        let r = fm::robust_test(&p, &opts).map_err(|e| format!("fragile case {case}: {e}"))?;
        let RobustVerdict::NotRobust { witness, .. } = &r.report.verdict else {
            return Err(format!("fragile case {case}: mu {} not NotRobust", r.mu()));
        };
        let abscissa = fm::closed_loop_abscissa(&p, &witness.perturbation).map_err(|e| e.to_string())?;
        ensure(abscissa >= -1e-9, || format!("fragile case {case}: witness abscissa {abscissa}"))?;
        let boundary = r.boundary.as_ref().ok_or_else(|| format!("fragile case {case}: no boundary witness"))?;
        let traj = fm::simulate(&p, boundary, &fm::SimOptions::default()).map_err(|e| format!("fragile case {case}: {e}"))?;
        ensure(traj.diverged, || format!("fragile case {case}: simulation did not diverge"))?;
    }
    Ok("50 robust instances without destabilizers, 50 fragile instances with diverging witnesses".into())
}

fn delay_invariance() -> Outcome {
    let mut rng = rng(7);
    let opts = MuOptions::default();
    for case in 0..50 {
        let n = rng.random_range(2..=6);
        let target = rng.random_range(0.3..=2.0);
        let p = fm_with_mu(&mut rng, n, target, &opts);
        let r = p.structure().total_dim();
        let tau = DMatrix::from_fn(r, r, |_, _| 10.0 * rng.random::<f64>());
        let rep = fm::delay_invariance(&p, &tau, &opts).map_err(|e| format!("case {case}: {e}"))?;
        ensure((rep.mu_plain - rep.mu_delayed).abs() <= 1e-12 && rep.verdict_identical && rep.gain_identical, || {
            format!("case {case}: {} vs {}", rep.mu_plain, rep.mu_delayed)
        })?;
    }
    Ok("50 delayed instances identical to their delay-free versions".into())
}

fn random_metzler_sym(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = rng.random_range(-1.0..1.0);
        for j in i + 1..n {
            let v = rng.random::<f64>();
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn qp_exactness() -> Outcome {
    let mut rng = rng(8);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let n = rng.random_range(1..=5);
        let objective = random_metzler_sym(&mut rng, n);
        let x0 = DVector::from_fn(n, |_, _| rng.random::<f64>()).normalize();
        let interior = &x0 * x0.transpose() * 0.9 + DMatrix::identity(n, n) * (0.1 / n as f64);
        let constraints: Vec<(DMatrix<f64>, f64)> = (0..rng.random_range(0..=3))
            .map(|_| {
                let a = random_metzler_sym(&mut rng, n);
                let b = (&a * &interior).trace() - 0.05;
                (a, b)
            })
            .collect();
        let inst = QPInstance::new(objective.clone(), constraints.clone(), true).unwrap();
        let sol = oracles::positive_qp_relaxation(&inst, &QpOptions::default()).map_err(|e| format!("case {case}: {e}"))?;
        for (a, b) in &constraints {
            let slack = sol.x.dot(&(a * &sol.x)) - b;
            ensure(slack >= -1e-6, || format!("case {case}: constraint slack {slack}"))?;
        }
        let value = sol.x.dot(&(&objective * &sol.x));
        let rel = (value - sol.value).abs() / sol.value.abs().max(1e-300).max(1.0);
        worst = worst.max(rel);
        ensure(rel <= 1e-4, || format!("case {case}: rank-one {value} vs relaxation {}", sol.value))?;
    }
    Ok(format!("50 instances, worst relative objective mismatch {worst:.2e}"))
}

fn interpolant() -> Outcome {
    let mut rng = rng(9);
    let mut rejected = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=6);
        let p = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let q = DVector::from_fn(n, |_, _| rng.random::<f64>());
        if q.norm() > p.norm() {
            ensure(dyad_interpolant(&p, &q).is_err(), || format!("case {case}: |q| > |p| accepted"))?;
            rejected += 1;
            continue;
        }
        let d = dyad_interpolant(&p, &q).map_err(|e| format!("case {case}: {e}"))?;
        let resid = (&d * &p - &q).amax();
        let norm = linalg::spectral_norm(&d);
        ensure(resid <= 1e-12 && norm <= 1.0 + 1e-12, || format!("case {case}: residual {resid}, norm {norm}"))?;
    }
    Ok(format!("1000 pairs, {rejected} correctly rejected"))
}

fn dominance_classifier() -> Outcome {
    let damped = second_order(0.9, 1.0);
    let r = systems::check_positive_dominance(&damped, GridSpec::default(), 1e-9).map_err(|e| e.to_string())?;
    ensure(r.verdict == DominanceVerdict::Dominated, || format!("zeta 0.9: {:?}", r.verdict))?;
    let pos = systems::check_external_positivity(&damped, 30.0, 1e-3).map_err(|e| e.to_string())?;
    ensure(matches!(pos, PositivityVerdict::RefutedAt { .. }), || format!("zeta 0.9 positivity: {pos:?}"))?;

    let resonant = second_order(0.5, 1.0);
    let r = systems::check_positive_dominance(&resonant, GridSpec::default(), 1e-9).map_err(|e| e.to_string())?;
    ensure(r.is_refuted(), || format!("zeta 0.5: {:?}", r.verdict))?;
    let expected = 1.0 / (2.0 * 0.5 * (1.0f64 - 0.25).sqrt());
    let peak = r.entries[0].worst_modulus;
    ensure((peak - expected).abs() <= 1e-3, || format!("zeta 0.5 peak {peak} vs {expected}"))?;
    Ok(format!("zeta 0.9 dominated and not externally positive; zeta 0.5 refuted with peak {peak:.6}"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 tightness of the scaling bound", tightness),
        ("2 scalar and full-block oracles", scalar_and_full_oracles),
        ("3 homogeneity", homogeneity),
        ("4 structure reduction", reduction),
        ("5 zero-frequency supremacy", zero_frequency),
        ("6 FM consistency", fm_consistency),
        ("7 delay invariance", delay_invariance),
        ("8 Metzler QP relaxation exactness", qp_exactness),
        ("9 dyad interpolant", interpolant),
        ("10 dominance classifier", dominance_classifier),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}

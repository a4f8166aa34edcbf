//! One handler per subcommand. Each returns an `Outcome`; `run` wraps it into a `Report`.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use posmu::fm::{self, Falsification, FmProblem, FmRobust, SimOptions, Trajectory};
use posmu::mu_core::{mu_nonneg, MuResult};
use posmu::structure::{lift_to_original, reduce_structure, PerturbationBlock, StructuredPerturbation};
use posmu::systems::{
    self, Destabilizer, DominanceMode, DominanceReport, DominanceVerdict, PositivityVerdict, RobustOptions,
    RobustReport, RobustVerdict, StateSpaceSystem,
};
use posmu::{linalg, BlockStructure, NonnegMatrix};
use serde_json::{json, Map, Value};

use crate::cli::{Command, FmCommand, GlobalArgs, Sampling};
use crate::options::EffectiveOptions;
use crate::problem::{rows_of, Problem, ProblemFile};
use crate::report::{fmt_sig, Diagnostics, Report, SIGNIFICANT_DIGITS};
use crate::{exit, CliError};

/// Dominance tolerance used by `dominance` and `robust`.
const DOMINANCE_TOL: f64 = 1e-9;
const SWEEP_GRID: (f64, f64, usize) = (1e-3, 1e3, 50);
/// Sampled impulse responses use this many steps unless `--dt` is given.
const POSITIVITY_STEPS: f64 = 20_000.0;

pub struct Outcome {
    pub verdict: &'static str,
    pub exit: i32,
    pub results: Value,
    pub certificates: Value,
    pub diagnostics: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn new(verdict: &'static str, exit: i32, results: Value) -> Self {
        Self { verdict, exit, results, certificates: json!({}), diagnostics: Map::new(), warnings: Vec::new() }
    }
}

/// Runs a command on a loaded file. Core errors are classified into input
/// and numerical failures, except a non-Hurwitz nominal system, which is a
/// finding and yields a report with exit code 1.
pub fn run(command: &Command, file: &ProblemFile, flags: &GlobalArgs) -> Result<Report, CliError> {
    let mut opts = EffectiveOptions::resolve(flags, &file.options)?;
    let start = Instant::now();
    let outcome = match dispatch(command, file, &mut opts) {
        Ok(o) => o,
        Err(CliError::Core(posmu::Error::NotHurwitz { abscissa })) => {
            let mut o = Outcome::new("not_hurwitz", exit::NEGATIVE, json!({ "spectral_abscissa": num(abscissa) }));
            o.warnings.push("the nominal system is not Hurwitz, so it is not robustly stable".into());
            o
        }
        Err(e) => return Err(e),
    };
    Ok(Report {
        command: command.name(),
        problem_kind: file.kind().into(),
        digest: file.digest(),
        verdict: outcome.verdict.into(),
        exit_code: outcome.exit,
        results: outcome.results,
        certificates: outcome.certificates,
        diagnostics: Diagnostics { fields: outcome.diagnostics, wall_time_s: start.elapsed().as_secs_f64() },
        warnings: outcome.warnings,
        options: opts,
    })
}

fn dispatch(command: &Command, file: &ProblemFile, opts: &mut EffectiveOptions) -> Result<Outcome, CliError> {
    match command {
        Command::Mu { .. } => cmd_mu(file, opts),
        Command::Reduce { .. } => cmd_reduce(file),
        Command::Dominance { sampling, .. } => cmd_dominance(file, sampling, opts),
        Command::Robust { assume_dominance, .. } => cmd_robust(file, *assume_dominance, opts),
        Command::Sweep { .. } => cmd_sweep(file, opts),
        Command::Fm { command } => {
            let Problem::Fm(spec) = &file.problem else {
                return Err(CliError::Input("problem: the fm subcommands need an fm problem".into()));
            };
            let prob = spec.problem()?;
            match command {
                FmCommand::Check { .. } => fm_check(&prob),
                FmCommand::Robust { .. } => fm_robust(&prob, opts),
                FmCommand::Simulate { sampling, witness, csv, .. } => {
                    fm_simulate(&prob, spec.p0()?, sampling, *witness, csv.as_deref(), opts)
                }
                FmCommand::Falsify { samples, .. } => fm_falsify(&prob, *samples, opts),
                FmCommand::Delays { .. } => {
                    let delays = spec
                        .delays()?
                        .ok_or_else(|| CliError::Input("problem.fm.delays: required by `fm delays`".into()))?;
                    fm_delays(&prob, &delays, opts)
                }
            }
        }
    }
}

/// JSON number, `null` for non-finite values.
fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn vec_json(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

fn mat_json(m: &DMatrix<f64>) -> Value {
    json!(rows_of(m))
}

/// Structure of a matrix or system file, as the system it describes.
fn system_of(file: &ProblemFile, command: &str) -> Result<(StateSpaceSystem, BlockStructure), CliError> {
    match &file.problem {
        Problem::Matrix(p) => Ok((StateSpaceSystem::static_map(p.matrix()?)?, p.structure()?)),
        Problem::System(p) => Ok((p.system()?, p.structure()?)),
        Problem::Fm(_) => Err(CliError::Input(format!(
            "problem: `{command}` needs a matrix or system problem; use the fm subcommands"
        ))),
    }
}

fn structure_of(file: &ProblemFile) -> Result<BlockStructure, CliError> {
    match &file.problem {
        Problem::Matrix(p) => p.structure(),
        Problem::System(p) => p.structure(),
        Problem::Fm(p) => crate::problem::structure(&p.structure, "problem.fm.structure"),
    }
}

fn canonical_index(s: &BlockStructure, input: usize) -> usize {
    s.input_index().iter().position(|&i| i == input).expect("input index is a permutation")
}

/// Blocks in input order, plus the assembled matrix when it is real.
fn perturbation_json(p: &StructuredPerturbation, s: &BlockStructure) -> Result<Value, CliError> {
    let blocks: Vec<Value> = (0..s.len())
        .map(|j| {
            let c = canonical_index(s, j);
            let spec = s.blocks()[c];
            let mut entry = json!({ "block": j, "kind": spec.kind.tag(), "field": spec.field.tag() });
            let (re, im) = match &p.blocks()[c] {
                PerturbationBlock::Full(m) => (mat_json(&m.map(|z| z.re)), {
                    let im = m.map(|z| z.im);
                    (im.iter().any(|&x| x != 0.0)).then(|| mat_json(&im))
                }),
                PerturbationBlock::Scalar(z) => (num(z.re), (z.im != 0.0).then(|| num(z.im))),
            };
            entry["re"] = re;
            if let Some(im) = im {
                entry["im"] = im;
            }
            entry
        })
        .collect();
    let mut out = json!({ "blocks": blocks });
    if let Some(real) = p.assemble_real() {
        out["delta"] = mat_json(&s.to_input(&real)?);
    }
    Ok(out)
}

/// Reduced block `k` scales the input block `theta_blocks[k]`.
fn theta_json(r: &MuResult, s: &BlockStructure) -> Value {
    let blocks: Vec<usize> = r.structure.origin_map().iter().map(|&c| s.input_index()[c]).collect();
    json!({ "theta_star": r.theta_star.as_slice().iter().map(|&x| num(x)).collect::<Vec<_>>(), "theta_blocks": blocks })
}

fn mu_diagnostics(r: &MuResult) -> Map<String, Value> {
    let mut d = Map::new();
    d.insert("bisection_steps".into(), json!(r.iterations));
    d.insert("cut_iterations".into(), json!(r.cut_iterations));
    d.insert("gap".into(), num(r.gap));
    d
}

fn mu_warnings(r: &MuResult, out: &mut Vec<String>) {
    if r.theta_at_box_boundary {
        out.push("the optimal scaling reached the edge of the search box; the infimum may not be attained".into());
    }
}

fn cmd_mu(file: &ProblemFile, opts: &EffectiveOptions) -> Result<Outcome, CliError> {
    let Problem::Matrix(p) = &file.problem else {
        return Err(CliError::Input("problem: `mu` needs a matrix problem".into()));
    };
    let (m, s) = (p.matrix()?, p.structure()?);
    let canonical = NonnegMatrix::new(s.to_canonical(&m)?)?;
    let reduced = reduce_structure(&s);
    let r = mu_nonneg(&canonical, &reduced, &opts.mu())?;
    let mut o = Outcome::new(
        "computed",
        exit::OK,
        json!({
            "mu": num(r.mu),
            "lower": num(r.lower),
            "spectral_radius": num(linalg::perron_root(&m)),
            "spectral_norm": num(linalg::spectral_norm(&m)),
            "theta_at_box_boundary": r.theta_at_box_boundary,
        }),
    );
    let mut cert = theta_json(&r, &s);
    if let Some(w) = &r.witness {
        let lifted = lift_to_original(&w.perturbation, &r.structure, &s)?;
        let mut wj = perturbation_json(&lifted, &s)?;
        wj["q"] = vec_json(&s.vector_to_input(&w.q));
        cert["witness"] = wj;
    }
    o.certificates = cert;
    o.diagnostics = mu_diagnostics(&r);
    mu_warnings(&r, &mut o.warnings);
    Ok(o)
}

fn cmd_reduce(file: &ProblemFile) -> Result<Outcome, CliError> {
    let s = structure_of(file)?;
    let r = reduce_structure(&s);
    let canonical: Vec<Value> = s
        .blocks()
        .iter()
        .zip(s.input_index())
        .map(|(b, &j)| json!({ "block": j, "kind": b.kind.tag(), "size": b.size, "field": b.field.tag() }))
        .collect();
    let origin: Vec<usize> = r.origin_map().iter().map(|&c| s.input_index()[c]).collect();
    Ok(Outcome::new(
        "computed",
        exit::OK,
        json!({
            "total_dim": s.total_dim(),
            "canonical_order": canonical,
            "reduced_sizes": r.sizes(),
            "reduced_origin": origin,
        }),
    ))
}

fn dominance_json(d: &DominanceReport) -> Value {
    let verdict = match d.verdict {
        DominanceVerdict::Dominated => json!("dominated"),
        DominanceVerdict::Refuted { omega, row, col } => json!({ "refuted": { "omega": num(omega), "row": row, "col": col } }),
        DominanceVerdict::InconclusiveGridPass => json!("inconclusive_grid_pass"),
    };
    let entries: Vec<Value> = d
        .entries
        .iter()
        .map(|e| {
            json!({
                "row": e.row, "col": e.col,
                "static_value": num(e.static_value),
                "worst_omega": num(e.worst_omega),
                "worst_modulus": num(e.worst_modulus),
                "margin": num(e.margin),
            })
        })
        .collect();
    json!({
        "verdict": verdict,
        "entries": entries,
        "grid": { "lo": num(d.grid.lo), "hi": num(d.grid.hi), "points": d.grid.points, "refinements": d.grid.refinements },
    })
}

fn grid_warning(d: &DominanceReport) -> String {
    format!(
        "dominance was checked on a finite grid of {} points in [{}, {}] rad/s",
        d.grid.points,
        fmt_sig(d.grid.lo, SIGNIFICANT_DIGITS),
        fmt_sig(d.grid.hi, SIGNIFICANT_DIGITS)
    )
}

fn cmd_dominance(file: &ProblemFile, sampling: &Sampling, opts: &mut EffectiveOptions) -> Result<Outcome, CliError> {
    let (sys, _) = system_of(file, "dominance")?;
    let abscissa = systems::check_hurwitz(sys.a())?;
    let d = systems::check_positive_dominance(&sys, opts.grid_spec(), DOMINANCE_TOL)?;
    let horizon = match sampling.horizon {
        Some(h) => h,
        None if abscissa.is_finite() => (20.0 / abscissa.abs()).min(1e6),
        None => 1.0,
    };
    let dt = sampling.dt.unwrap_or(horizon / POSITIVITY_STEPS);
    opts.set("dominance_tol", DOMINANCE_TOL);
    opts.set("horizon", num(horizon));
    opts.set("dt", num(dt));
    let positivity = match systems::check_external_positivity(&sys, horizon, dt)? {
        PositivityVerdict::Positive { samples } => json!({ "verdict": "positive", "samples": samples }),
        PositivityVerdict::RefutedAt { t, row, col, value } => json!({
            "verdict": "refuted", "t": num(t), "row": row, "col": col, "value": num(value)
        }),
    };
    let (verdict, code) = match d.verdict {
        DominanceVerdict::Dominated => ("dominated", exit::OK),
        DominanceVerdict::Refuted { .. } => ("refuted", exit::NEGATIVE),
        DominanceVerdict::InconclusiveGridPass => ("inconclusive_grid_pass", exit::OK),
    };
    let mut o = Outcome::new(
        verdict,
        code,
        json!({ "dominance": dominance_json(&d), "external_positivity": positivity }),
    );
    if !d.is_refuted() {
        o.warnings.push(grid_warning(&d));
    }
    if d.verdict == DominanceVerdict::InconclusiveGridPass {
        o.warnings.push("every grid point passed but the response has not rolled off at the top of the grid".into());
    }
    o.warnings.push("external positivity is checked on sampled impulse responses".into());
    Ok(o)
}

fn destabilizer_json(w: &Destabilizer, s: &BlockStructure) -> Result<Value, CliError> {
    let mut v = perturbation_json(&w.perturbation, s)?;
    v["q"] = vec_json(&w.q);
    v["omega"] = num(w.omega);
    Ok(v)
}

/// Verdict, exit code and certificates shared by `robust` and `fm robust`.
fn robust_outcome(report: &RobustReport, s: &BlockStructure, mut results: Map<String, Value>) -> Result<Outcome, CliError> {
    let r = &report.mu;
    results.insert("mu".into(), num(r.mu));
    results.insert("lower".into(), num(r.lower));
    results.insert("static_gain".into(), mat_json(&report.static_gain));
    results.insert(
        "dominance".into(),
        match &report.dominance {
            Some(d) => dominance_json(d),
            None => json!("assumed"),
        },
    );
    let mut cert = theta_json(r, s);
    let mut warnings = Vec::new();
    let (verdict, code) = match &report.verdict {
        RobustVerdict::RobustlyStable { .. } => ("robustly_stable", exit::OK),
        RobustVerdict::NotRobust { witness, .. } => {
            cert["witness"] = destabilizer_json(witness, s)?;
            ("not_robust", exit::NEGATIVE)
        }
        RobustVerdict::Marginal { mu, lower, witness, .. } => {
            if let Some(w) = witness {
                cert["witness"] = destabilizer_json(w, s)?;
            }
            warnings.push(format!(
                "marginal: mu = {} and the lower bound {} are within tolerance of 1, so neither verdict is certified",
                fmt_sig(*mu, SIGNIFICANT_DIGITS),
                fmt_sig(*lower, SIGNIFICANT_DIGITS)
            ));
            ("marginal", exit::NEGATIVE)
        }
    };
    if let Some(d) = &report.dominance {
        warnings.push(grid_warning(d));
    }
    mu_warnings(r, &mut warnings);
    let mut o = Outcome::new(verdict, code, Value::Object(results));
    o.certificates = cert;
    o.diagnostics = mu_diagnostics(r);
    o.warnings = warnings;
    Ok(o)
}

fn cmd_robust(file: &ProblemFile, assume: bool, opts: &mut EffectiveOptions) -> Result<Outcome, CliError> {
    let (sys, s) = system_of(file, "robust")?;
    let dominance = if assume || sys.states() == 0 {
        DominanceMode::Assumed
    } else {
        opts.set("dominance_tol", DOMINANCE_TOL);
        DominanceMode::Verify { grid: opts.grid_spec(), tol: DOMINANCE_TOL }
    };
    let report = systems::robust_stability(&sys, &s, &RobustOptions { mu: opts.mu(), dominance })?;
    let mut o = robust_outcome(&report, &s, Map::new())?;
    if assume && sys.states() > 0 {
        o.warnings.push("positive dominance was assumed, not checked".into());
    }
    Ok(o)
}

fn cmd_sweep(file: &ProblemFile, opts: &mut EffectiveOptions) -> Result<Outcome, CliError> {
    let (sys, s) = system_of(file, "sweep")?;
    let (lo, hi, n) = opts.grid.map_or(SWEEP_GRID, |g| (g.lo, g.hi, g.points));
    if opts.grid.is_none() {
        opts.set("sweep_grid", json!({ "lo": lo, "hi": hi, "points": n }));
    }
    let mut freqs = vec![0.0];
    freqs.extend(systems::log_grid(lo, hi, n)?);
    let points = systems::frequency_sweep_mu(&sys, &s, &freqs, &opts.mu())?;
    let zero = points[0].upper;
    let peak = points.iter().fold(&points[0], |best, p| if p.upper > best.upper { p } else { best });
    let mut o = Outcome::new(
        "computed",
        exit::OK,
        json!({
            "zero_frequency": num(zero),
            "peak": { "omega": num(peak.omega), "upper": num(peak.upper) },
            "points": points.iter().map(|p| json!({ "omega": num(p.omega), "upper": num(p.upper) })).collect::<Vec<_>>(),
        }),
    );
    o.warnings.push("sweep values are upper bounds only".into());
    if peak.upper > zero * (1.0 + 1e-6) + 1e-6 {
        o.warnings.push(format!("the bound peaks at omega = {} above its zero-frequency value", peak.omega));
    }
    Ok(o)
}

fn fm_check(prob: &FmProblem) -> Result<Outcome, CliError> {
    let a = fm::nominal_feasible(prob)?;
    let mut results = json!({ "feasible": a.feasible, "rho": num(a.rho), "spectral_abscissa": num(a.abscissa) });
    if let Some(p) = &a.p_bar {
        results["p_bar"] = vec_json(p);
    }
    Ok(if a.feasible {
        Outcome::new("feasible", exit::OK, results)
    } else {
        Outcome::new("infeasible", exit::NEGATIVE, results)
    })
}

fn nominally_infeasible(prob: &FmProblem) -> Result<Option<Outcome>, CliError> {
    let o = fm_check(prob)?;
    if o.exit == exit::OK {
        return Ok(None);
    }
    let mut o = Outcome { verdict: "nominally_infeasible", ..o };
    o.warnings.push("the nominal targets are infeasible, so the network is not robustly stable".into());
    Ok(Some(o))
}

fn fm_robust_outcome(r: &FmRobust, prob: &FmProblem) -> Result<Outcome, CliError> {
    let mut results = Map::new();
    results.insert("internally_positive".into(), json!(r.internally_positive));
    let mut o = robust_outcome(&r.report, prob.structure(), results)?;
    if let Some(b) = &r.boundary {
        o.certificates["boundary"] = perturbation_json(b, prob.structure())?;
    }
    Ok(o)
}

fn fm_robust(prob: &FmProblem, opts: &EffectiveOptions) -> Result<Outcome, CliError> {
    if let Some(o) = nominally_infeasible(prob)? {
        return Ok(o);
    }
    fm_robust_outcome(&fm::robust_test(prob, &opts.mu())?, prob)
}

fn write_csv(path: &Path, t: &Trajectory) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let n = t.powers.ncols();
    let mut header = vec!["time".to_string()];
    header.extend((0..n).map(|i| format!("p{i}")));
    header.extend((0..n).map(|i| format!("sinr{i}")));
    w.write_record(&header).map_err(io)?;
    for (k, time) in t.times.iter().enumerate() {
        let mut row = vec![time.to_string()];
        row.extend(t.powers.row(k).iter().map(f64::to_string));
        row.extend(t.sinr.row(k).iter().map(f64::to_string));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn fm_simulate(
    prob: &FmProblem,
    p0: Option<DVector<f64>>,
    sampling: &Sampling,
    witness: bool,
    csv_path: Option<&Path>,
    opts: &mut EffectiveOptions,
) -> Result<Outcome, CliError> {
    let delta = if witness {
        let r = fm::robust_test(prob, &opts.mu())?;
        r.boundary.ok_or_else(|| {
            CliError::Input("--witness: the robust test produced no destabilizing perturbation".into())
        })?
    } else {
        StructuredPerturbation::zero(prob.structure())
    };
    let t = fm::simulate(prob, &delta, &SimOptions { horizon: sampling.horizon, dt: sampling.dt, p0 })?;
    if let Some(path) = csv_path {
        write_csv(path, &t)?;
    }
    let last = t.times.len() - 1;
    opts.set("perturbation", if witness { "witness" } else { "nominal" });
    let mut results = json!({
        "converged": t.converged,
        "diverged": t.diverged,
        "spectral_abscissa": num(t.abscissa),
        "final_time": num(t.times[last]),
        "final_powers": vec_json(&t.powers.row(last).transpose()),
        "final_sinr": vec_json(&t.sinr.row(last).transpose()),
        "min_power": num(t.min_power),
    });
    if let Some(l) = &t.limit {
        results["limit"] = vec_json(l);
    }
    let (verdict, code) = if t.diverged {
        ("diverged", exit::NEGATIVE)
    } else if t.converged {
        ("converged", exit::OK)
    } else {
        ("undecided", exit::OK)
    };
    let mut o = Outcome::new(verdict, code, results);
    o.diagnostics.insert("dt".into(), num(t.dt));
    o.diagnostics.insert("halvings".into(), json!(t.halvings));
    o.diagnostics.insert("rows".into(), json!(t.times.len()));
    if verdict == "undecided" {
        o.warnings.push("the horizon ended before the trajectory settled or diverged".into());
    }
    if witness {
        o.certificates = json!({ "perturbation": perturbation_json(&delta, prob.structure())? });
    }
    Ok(o)
}

fn fm_falsify(prob: &FmProblem, samples: usize, opts: &mut EffectiveOptions) -> Result<Outcome, CliError> {
    if samples == 0 {
        return Err(CliError::Input("--samples: at least one sample is required".into()));
    }
    if let Some(o) = nominally_infeasible(prob)? {
        return Ok(o);
    }
    opts.set("samples", samples);
    Ok(match fm::falsify(prob, samples, opts.seed)? {
        Falsification::NoneFound { samples } => {
            let mut o = Outcome::new("no_destabilizer", exit::OK, json!({ "samples": samples }));
            o.warnings.push("random sampling cannot prove robust stability".into());
            o
        }
        Falsification::Destabilizer { sample, perturbation, abscissa } => {
            let mut o = Outcome::new(
                "destabilizer_found",
                exit::NEGATIVE,
                json!({ "sample": sample, "spectral_abscissa": num(abscissa) }),
            );
            o.certificates = json!({ "perturbation": perturbation_json(&perturbation, prob.structure())? });
            o
        }
    })
}

fn verdict_tag(v: &RobustVerdict) -> &'static str {
    match v {
        RobustVerdict::RobustlyStable { .. } => "robustly_stable",
        RobustVerdict::NotRobust { .. } => "not_robust",
        RobustVerdict::Marginal { .. } => "marginal",
    }
}

fn fm_delays(prob: &FmProblem, delays: &DMatrix<f64>, opts: &EffectiveOptions) -> Result<Outcome, CliError> {
    if let Some(o) = nominally_infeasible(prob)? {
        return Ok(o);
    }
    let r = fm::delay_invariance(prob, delays, &opts.mu())?;
    let difference = (r.mu_plain - r.mu_delayed).abs();
    let invariant = r.gain_identical && r.verdict_identical && difference <= 1e-12;
    let results = json!({
        "mu_plain": num(r.mu_plain),
        "mu_delayed": num(r.mu_delayed),
        "mu_difference": num(difference),
        "gain_identical": r.gain_identical,
        "verdict_identical": r.verdict_identical,
        "verdict_plain": verdict_tag(&r.plain.report.verdict),
        "verdict_delayed": verdict_tag(&r.delayed.report.verdict),
    });
    Ok(if invariant {
        Outcome::new("invariant", exit::OK, results)
    } else {
        Outcome::new("not_invariant", exit::NEGATIVE, results)
    })
}

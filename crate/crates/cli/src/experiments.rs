//! Dispatch from a validated [`RunConfig`] to the laboratory operations.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use qnoise_core::feller::{self, EndVerdict, KillOptions};
use qnoise_core::galilei::{self, GalileanGenerator};
use qnoise_core::gks::{self, CMat, StandardGenerator};
use qnoise_core::grid::{expectation, Lattice, Observable, WaveFunction};
use qnoise_core::levy::{self, char_exponent_1d, char_exponent_2d};
use qnoise_core::mc::McConfig;
use qnoise_core::noise::{self, NoiseSemigroupSpec, ResultRow, SampledFunction, Verdict};
use qnoise_core::rng::stream_rng;
use qnoise_core::stats::{empirical_char_function, empirical_char_function_2d};

use crate::config::{ObservableSpec, Params, RunConfig, StateSpec, Triplet};

/// Number of standard errors allowed by every Monte Carlo comparison.
pub const Z_BAND: f64 = 4.0;

#[derive(Debug)]
pub enum RunError {
    /// Invalid input detected by a module.
    Usage(String),
    /// Numerical breakdown or I/O failure.
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(m) | RunError::Runtime(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for RunError {}

fn ctx(context: &str) -> impl Fn(qnoise_core::Error) -> RunError + '_ {
    move |e| {
        let message = format!("{context}: {e}");
        match e {
            qnoise_core::Error::InvalidParameter { .. }
            | qnoise_core::Error::DimensionMismatch { .. }
            | qnoise_core::Error::Empty(_) => RunError::Usage(message),
            _ => RunError::Runtime(message),
        }
    }
}

/// A named scalar result with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
}

impl Metric {
    fn new(name: impl Into<String>, value: f64) -> Self {
        Metric {
            name: name.into(),
            value,
            stderr: None,
            verdict: None,
        }
    }

    fn with_stderr(mut self, stderr: f64) -> Self {
        self.stderr = Some(stderr);
        self
    }

    fn judged(mut self, ok: bool) -> Self {
        self.verdict = Some(if ok { Verdict::Pass } else { Verdict::Fail });
        self
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub verdict: Verdict,
    pub summary: String,
    pub metrics: Vec<Metric>,
    /// File stem and CSV text.
    pub tables: Vec<(String, String)>,
    /// File stem and JSON document.
    pub documents: Vec<(String, Value)>,
}

fn combine(verdicts: impl IntoIterator<Item = Verdict>) -> Verdict {
    let mut out = Verdict::Pass;
    for v in verdicts {
        match v {
            Verdict::Fail => return Verdict::Fail,
            Verdict::Inconclusive => out = Verdict::Inconclusive,
            Verdict::Pass => {}
        }
    }
    out
}

fn pass_if(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn mc(n_paths: usize, seed: u64) -> Result<McConfig, RunError> {
    McConfig::new(n_paths, seed).map_err(ctx("mc"))
}

fn gaussian_state(grid: qnoise_core::grid::GridSpec, s: StateSpec) -> Result<WaveFunction, RunError> {
    let lattice = Lattice::new(grid).map_err(ctx("grid"))?;
    Ok(WaveFunction::gaussian(lattice, s.q0, s.p0, s.sigma))
}

/// Runs the experiment; `progress` receives human-readable status lines.
pub fn run_experiment(cfg: &RunConfig, progress: &dyn Fn(&str)) -> Result<Outcome, RunError> {
    let seed = cfg.seed;
    match &cfg.params {
        Params::LevySample { triplet, t, steps } => levy_sample(triplet, *t, *steps, seed),
        Params::CharCheck { triplet, t, args, n_paths } => {
            progress(&format!("char-check: {n_paths} paths"));
            char_check(triplet, *t, args, &mc(*n_paths, seed)?)
        }
        Params::McSemigroup {
            triplet,
            grid,
            state,
            t,
            observables,
            n_paths,
        } => {
            let psi = gaussian_state(*grid, *state)?;
            let spec = NoiseSemigroupSpec::new(triplet.clone(), *grid).map_err(ctx("mc-semigroup"))?;
            mc_semigroup(&spec, &psi, *t, observables, &mc(*n_paths, seed)?, progress)
        }
        Params::GeneratorCheck {
            triplet,
            grid,
            t,
            points,
            function,
            n_paths,
        } => {
            let spec = NoiseSemigroupSpec::new(triplet.clone(), *grid).map_err(ctx("generator-check"))?;
            let span = points.iter().fold(0.0f64, |m, p| m.max(p.abs())) + 30.0;
            let dx = 0.004;
            let n = (2.0 * span / dx).round() as usize + 1;
            let f = SampledFunction::from_fn(|x| function.eval(x), -span, dx, n).map_err(ctx("generator-check"))?;
            progress(&format!("generator-check: {n_paths} paths at t = {t}"));
            let report = noise::generator_consistency_check(&spec, &f, points, *t, &mc(*n_paths, seed)?)
                .map_err(ctx("generator-check"))?;
            let mut csv = String::from("x,generator,quotient,stderr,bias,bias_stderr\n");
            for p in &report.points {
                writeln!(csv, "{},{},{},{},{},{}", p.x, p.generator, p.quotient, p.stderr, p.bias, p.bias_stderr).unwrap();
            }
            Ok(Outcome {
                verdict: report.verdict,
                summary: format!(
                    "max deviation {:.3e}, bias band {:.3e}, excess {:.3e}",
                    report.max_deviation, report.bias_band, report.max_excess
                ),
                metrics: vec![
                    Metric::new("max_deviation", report.max_deviation),
                    Metric::new("bias_band", report.bias_band),
                    Metric::new("max_excess", report.max_excess),
                ],
                tables: vec![("generator-check".into(), csv)],
                documents: vec![("generator-check".into(), to_json(&report))],
            })
        }
        Params::CpSuite {
            count,
            max_dim,
            max_jumps,
            t,
        } => cp_suite(*count, *max_dim, *max_jumps, *t, seed),
        Params::Dyson {
            gamma,
            omega,
            t,
            terms,
            tolerance,
        } => dyson(*gamma, *omega, *t, *terms, *tolerance),
        Params::GaugeSuite {
            count,
            max_dim,
            max_jumps,
        } => gauge_suite(*count, *max_dim, *max_jumps, seed),
        Params::GalileiCompare {
            triplet,
            free,
            grid,
            state,
            t,
            n_steps,
            labels,
            n_paths,
        } => {
            let g = GalileanGenerator::new(triplet.clone(), *free).map_err(ctx("galilei-compare"))?;
            let psi = gaussian_state(*grid, *state)?;
            let base = mc(*n_paths, seed)?;
            let mut reports = Vec::new();
            let mut csv = String::from("x,v,n_steps,re,im,stderr,closed_re,closed_im,band,deviation,within_band\n");
            let mut metrics = Vec::new();
            for (i, l) in labels.iter().enumerate() {
                progress(&format!("galilei-compare: label ({}, {}), {n_paths} paths", l.x, l.v));
                let r = galilei::mc_vs_closed_form(&g, l.x, l.v, &psi, *t, *n_steps, &base.reseeded(i as u64))
                    .map_err(ctx("galilei-compare"))?;
                for run in [&r.coarse, &r.fine] {
                    writeln!(
                        csv,
                        "{},{},{},{},{},{},{},{},{},{},{}",
                        l.x,
                        l.v,
                        run.n_steps,
                        run.estimate.value.re,
                        run.estimate.value.im,
                        run.estimate.stderr,
                        r.closed_form.re,
                        r.closed_form.im,
                        run.discretization_band,
                        run.deviation,
                        run.within_band
                    )
                    .unwrap();
                    metrics.push(
                        Metric::new(format!("deviation[{},{};n={}]", l.x, l.v, run.n_steps), run.deviation)
                            .with_stderr(run.estimate.stderr)
                            .judged(run.within_band),
                    );
                }
                reports.push(r);
            }
            let verdict = combine(reports.iter().map(|r| r.verdict));
            Ok(Outcome {
                verdict,
                summary: format!("{} labels compared with the closed form", reports.len()),
                metrics,
                tables: vec![("galilei-compare".into(), csv)],
                documents: vec![("galilei-compare".into(), to_json(&reports))],
            })
        }
        Params::CovarianceCheck {
            triplet,
            free,
            grid,
            state,
            shifts,
            n_steps,
            n_paths,
        } => {
            let g = GalileanGenerator::new(triplet.clone(), *free).map_err(ctx("covariance-check"))?;
            let psi = gaussian_state(*grid, *state)?;
            let base = mc(*n_paths, seed)?;
            let battery = galilei::weyl_battery();
            let mut reports = Vec::new();
            let mut csv = String::from("x,v,t,observable_x,observable_v,defect,defect_stderr,max_path_defect,within_band\n");
            let mut metrics = Vec::new();
            for (i, &[x, v, t]) in shifts.iter().enumerate() {
                progress(&format!("covariance-check: shift ({x}, {v}) at t = {t}"));
                let r = galilei::galilean_covariance_check(&g, x, v, t, &psi, &battery, *n_steps, &base.reseeded(i as u64))
                    .map_err(ctx("covariance-check"))?;
                for e in &r.entries {
                    writeln!(
                        csv,
                        "{x},{v},{t},{},{},{},{},{},{}",
                        e.observable.x, e.observable.v, e.defect, e.defect_stderr, e.max_path_defect, e.within_band
                    )
                    .unwrap();
                }
                let worst = r.entries.iter().map(|e| e.defect).fold(0.0, f64::max);
                metrics.push(Metric::new(format!("max_defect[{x},{v},{t}]"), worst).judged(r.verdict == Verdict::Pass));
                reports.push(r);
            }
            Ok(Outcome {
                verdict: combine(reports.iter().map(|r| r.verdict)),
                summary: format!("{} shifts checked", reports.len()),
                metrics,
                tables: vec![("covariance-check".into(), csv)],
                documents: vec![("covariance-check".into(), to_json(&reports))],
            })
        }
        Params::FellerClassify {
            drift,
            expect_l,
            expect_infinity,
        } => {
            let report = feller::feller_test(drift);
            let mut verdicts = Vec::new();
            for (got, want) in [(report.left.verdict, expect_l), (report.right.verdict, expect_infinity)] {
                verdicts.push(match want {
                    Some(w) => pass_if(got == *w),
                    None if got == EndVerdict::Inconclusive => Verdict::Inconclusive,
                    None => Verdict::Pass,
                });
            }
            let mut csv = String::from("end,cutoff,log_integral\n");
            for (end, d) in [("l", &report.left), ("infinity", &report.right)] {
                for (c, li) in d.cutoffs.iter().zip(&d.log_integrals) {
                    writeln!(csv, "{end},{c},{li}").unwrap();
                }
            }
            Ok(Outcome {
                verdict: combine(verdicts),
                summary: format!("l {}; infinity {}", report.left.verdict, report.right.verdict),
                metrics: vec![
                    Metric::new("left_slope", report.left.slope),
                    Metric::new("left_r_squared", report.left.r_squared),
                    Metric::new("right_slope", report.right.slope),
                    Metric::new("right_r_squared", report.right.r_squared),
                ],
                tables: vec![("feller-classify".into(), csv)],
                documents: vec![("feller-classify".into(), to_json(&report))],
            })
        }
        Params::KilledDiffusion {
            drift,
            x_start,
            t,
            dt,
            curve_points,
            rule,
            bridge,
            compare_reflecting,
            expect_survival,
            tolerance,
            n_paths,
        } => {
            let base = mc(*n_paths, seed)?;
            let opts = KillOptions {
                rule: *rule,
                bridge: *bridge,
                curve_points: *curve_points,
                ..KillOptions::default()
            };
            progress(&format!("killed-diffusion: {n_paths} paths, dt = {dt}"));
            let result = feller::simulate_killed_diffusion(drift, *x_start, *t, *dt, &opts, &base)
                .map_err(ctx("killed-diffusion"))?;
            for w in &result.warnings {
                progress(&format!("warning: {w}"));
            }
            let mut survival = Metric::new("survival", result.survival.value).with_stderr(result.survival.stderr);
            let mut verdict = Verdict::Pass;
            if let Some(e) = expect_survival {
                let ok = (result.survival.value - e).abs() <= *tolerance;
                survival = survival.judged(ok);
                verdict = pass_if(ok);
            }
            let mut metrics = vec![
                survival,
                Metric::new("killed_at_l", result.killed_at_l),
                Metric::new("killed_at_infinity", result.killed_at_infinity),
            ];
            let mut tables = Vec::new();
            let mut buf = Vec::new();
            feller::write_survival_csv(&result.curve, &mut buf).expect("in-memory write");
            tables.push(("killed-diffusion".into(), String::from_utf8(buf).expect("utf-8")));
            let mut documents = vec![("killed-diffusion".into(), to_json(&result))];
            if *compare_reflecting {
                progress("killed-diffusion: minimal against reflecting");
                let link = feller::trace_decay_link(drift, *x_start, *t, *dt, *curve_points, &base)
                    .map_err(ctx("killed-diffusion"))?;
                let mut csv = String::from("t,minimal,minimal_stderr,reflecting,reflecting_stderr\n");
                for (a, b) in link.minimal.iter().zip(&link.reflecting) {
                    writeln!(csv, "{},{},{},{},{}", a.t, a.survival, a.stderr, b.survival, b.stderr).unwrap();
                }
                tables.push(("trace-decay".into(), csv));
                metrics.push(Metric::new("max_separation", link.max_separation));
                documents.push(("trace-decay".into(), to_json(&link)));
            }
            Ok(Outcome {
                verdict,
                summary: format!("survival {:.6} +- {:.6}", result.survival.value, result.survival.stderr),
                metrics,
                tables,
                documents,
            })
        }
    }
}

fn levy_sample(triplet: &Triplet, t: f64, steps: usize, seed: u64) -> Result<Outcome, RunError> {
    let grid: Vec<f64> = (0..=steps).map(|k| t * k as f64 / steps as f64).collect();
    let mut buf = Vec::new();
    let (jumps, log) = match triplet {
        Triplet::One(tr) => {
            let path = levy::sample_increments(tr, &grid, seed).map_err(ctx("levy-sample"))?;
            path.write_csv(&mut buf).expect("in-memory write");
            (path.jump_log.len(), path.jump_log_json())
        }
        Triplet::Two(tr) => {
            let path = levy::sample_increments_2d(tr, &grid, seed).map_err(ctx("levy-sample"))?;
            path.write_csv(&mut buf).expect("in-memory write");
            (path.jump_log.len(), path.jump_log_json())
        }
    };
    Ok(Outcome {
        verdict: Verdict::Pass,
        summary: format!("{} grid points, {jumps} large jumps", grid.len()),
        metrics: vec![Metric::new("large_jumps", jumps as f64)],
        tables: vec![("levy-sample".into(), String::from_utf8(buf).expect("utf-8"))],
        documents: vec![("levy-sample-jumps".into(), serde_json::from_str(&log).expect("valid json"))],
    })
}

#[derive(Serialize)]
struct CharRow {
    arg: [f64; 2],
    empirical: Complex64,
    stderr: f64,
    exact: Complex64,
    z: f64,
}

fn char_check(triplet: &Triplet, t: f64, args: &[[f64; 2]], mc: &McConfig) -> Result<Outcome, RunError> {
    let mut rows = Vec::new();
    match triplet {
        Triplet::One(tr) => {
            let samples = levy::sample_terminal(tr, t, mc).map_err(ctx("char-check"))?;
            for &[a, _] in args {
                let est = empirical_char_function(&samples, a).map_err(ctx("char-check"))?;
                let exact = (char_exponent_1d(tr, a).map_err(ctx("char-check"))? * t).exp();
                rows.push(CharRow {
                    arg: [a, 0.0],
                    empirical: est.value,
                    stderr: est.stderr,
                    exact,
                    z: est.z_score(exact),
                });
            }
        }
        Triplet::Two(tr) => {
            let samples = levy::sample_terminal_2d(tr, t, mc).map_err(ctx("char-check"))?;
            for &arg in args {
                let est = empirical_char_function_2d(&samples, arg).map_err(ctx("char-check"))?;
                let exact = (char_exponent_2d(tr, arg[0], -arg[1]).map_err(ctx("char-check"))? * t).exp();
                rows.push(CharRow {
                    arg,
                    empirical: est.value,
                    stderr: est.stderr,
                    exact,
                    z: est.z_score(exact),
                });
            }
        }
    }
    let worst = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    let mut csv = String::from("arg0,arg1,re,im,stderr,exact_re,exact_im,z\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.arg[0], r.arg[1], r.empirical.re, r.empirical.im, r.stderr, r.exact.re, r.exact.im, r.z
        )
        .unwrap();
    }
    Ok(Outcome {
        verdict: pass_if(worst <= Z_BAND),
        summary: format!("largest z-score {worst:.3} over {} arguments", rows.len()),
        metrics: rows
            .iter()
            .map(|r| Metric::new(format!("z[{},{}]", r.arg[0], r.arg[1]), r.z).judged(r.z <= Z_BAND))
            .collect(),
        tables: vec![("char-check".into(), csv)],
        documents: vec![(
            "char-check".into(),
            json!({ "t": t, "n_paths": mc.n_paths, "seed": mc.seed, "rows": to_json(&rows) }),
        )],
    })
}

#[derive(Serialize)]
struct SemigroupRow {
    observable: String,
    estimate: Complex64,
    stderr: f64,
    oracle: Complex64,
    oracle_stderr: f64,
    z: f64,
}

fn mc_semigroup(
    spec: &NoiseSemigroupSpec,
    psi: &WaveFunction,
    t: f64,
    observables: &[ObservableSpec],
    mc: &McConfig,
    progress: &dyn Fn(&str),
) -> Result<Outcome, RunError> {
    let lattice = psi.lattice().clone();
    let weights: Vec<f64> = psi.amplitudes().iter().map(|a| a.norm_sqr() * lattice.spec().dx).collect();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for (i, obs) in observables.iter().enumerate() {
        progress(&format!("mc-semigroup: {} with {} paths", obs.name(), mc.n_paths));
        let observable = match obs {
            ObservableSpec::P2 => Observable::momentum(&lattice, |p| p * p),
            ObservableSpec::Weyl(l) => Observable::Weyl(*l),
            other => Observable::position(&lattice, other.position_fn().expect("position observable")),
        };
        let est = noise::mc_heisenberg_expectation(spec, psi, &observable, t, mc).map_err(ctx("mc-semigroup"))?;
        let (oracle, oracle_stderr) = match obs {
            ObservableSpec::P2 | ObservableSpec::Weyl(_) => {
                // momentum observables commute with the noise; Weyl operators
                // pick up the classical factor exp(t eta(v))
                let base = expectation(psi, &observable).map_err(ctx("mc-semigroup"))?.value;
                let factor = match obs {
                    ObservableSpec::Weyl(l) => (char_exponent_1d(&spec.triplet, l.v).map_err(ctx("mc-semigroup"))? * t).exp(),
                    _ => Complex64::new(1.0, 0.0),
                };
                (base * factor, 0.0)
            }
            other => {
                let f = other.position_fn().expect("position observable");
                let o = levy::convolve_classical_weighted(
                    f,
                    &spec.triplet,
                    t,
                    lattice.positions(),
                    &weights,
                    &mc.reseeded(1000 + i as u64),
                )
                .map_err(ctx("mc-semigroup"))?;
                (Complex64::new(o.value, 0.0), o.stderr)
            }
        };
        let joint = (est.estimate.stderr.powi(2) + oracle_stderr.powi(2)).sqrt();
        let dev = (est.estimate.value - oracle).norm();
        let z = if joint > 0.0 {
            dev / joint
        } else if dev <= 1e-10 {
            0.0
        } else {
            f64::INFINITY
        };
        results.push(ResultRow {
            t,
            observable: obs.name(),
            value: est.estimate.value,
            stderr: est.estimate.stderr,
            n_paths: mc.n_paths,
            seed: mc.seed,
        });
        rows.push(SemigroupRow {
            observable: obs.name(),
            estimate: est.estimate.value,
            stderr: est.estimate.stderr,
            oracle,
            oracle_stderr,
            z,
        });
    }
    let mut buf = Vec::new();
    noise::write_results_csv(&results, &mut buf).expect("in-memory write");
    let mut oracle_csv = String::from("observable,re,im,stderr,oracle_re,oracle_im,oracle_stderr,z\n");
    for r in &rows {
        writeln!(
            oracle_csv,
            "{},{},{},{},{},{},{},{}",
            r.observable, r.estimate.re, r.estimate.im, r.stderr, r.oracle.re, r.oracle.im, r.oracle_stderr, r.z
        )
        .unwrap();
    }
    let worst = rows.iter().map(|r| r.z).fold(0.0, f64::max);
    Ok(Outcome {
        verdict: pass_if(worst <= Z_BAND),
        summary: format!("largest joint z-score {worst:.3} over {} observables", rows.len()),
        metrics: rows
            .iter()
            .map(|r| Metric::new(r.observable.clone(), r.estimate.re).with_stderr(r.stderr).judged(r.z <= Z_BAND))
            .collect(),
        tables: vec![("mc-semigroup".into(), String::from_utf8(buf).expect("utf-8")), ("mc-semigroup-oracle".into(), oracle_csv)],
        documents: vec![("mc-semigroup".into(), json!({ "t": t, "n_paths": mc.n_paths, "seed": mc.seed, "rows": to_json(&rows) }))],
    })
}

/// Dimension and jump count of the `i`-th random case.
fn case_shape(i: usize, max_dim: usize, max_jumps: usize) -> (usize, usize) {
    let dims: Vec<usize> = (2..=max_dim.max(2)).collect();
    (dims[i % dims.len()], 1 + (i / dims.len()) % max_jumps)
}

#[derive(Serialize)]
struct CpRow {
    index: usize,
    dim: usize,
    jumps: usize,
    unital: bool,
    conditional_cp_min_eigenvalue: f64,
    conditional_cp: bool,
    evolution_choi_min_eigenvalue: f64,
    unit_defect: f64,
}

/// Tolerances of the structure suite.
pub const CHOI_FLOOR: f64 = -1e-8;
pub const UNIT_TOLERANCE: f64 = 1e-10;

fn cp_suite(count: usize, max_dim: usize, max_jumps: usize, t: f64, seed: u64) -> Result<Outcome, RunError> {
    let mut rng = stream_rng(seed, 0);
    let mut rows = Vec::new();
    for index in 0..count {
        let (d, m) = case_shape(index, max_dim, max_jumps);
        let unital = index % 2 == 0;
        let g = gks::random_generator(&mut rng, d, m, unital);
        let sup = g.superoperator();
        let ccp = gks::is_conditionally_cp(|x| sup.apply(x), d, gks::STRUCTURE_TOLERANCE).map_err(ctx("cp-suite"))?;
        let evo = gks::exact_evolve(&g, t);
        let choi_min = evo.choi().eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        let unit_defect = if unital {
            let id = CMat::identity(d, d);
            let l_id = sup.apply(&id).camax();
            let e_id = (evo.apply(&id) - &id).camax();
            l_id.max(e_id)
        } else {
            0.0
        };
        rows.push(CpRow {
            index,
            dim: d,
            jumps: m,
            unital,
            conditional_cp_min_eigenvalue: ccp.min_eigenvalue,
            conditional_cp: ccp.passed,
            evolution_choi_min_eigenvalue: choi_min,
            unit_defect,
        });
    }
    let transpose = gks::is_completely_positive(|x| x.transpose(), 2, gks::STRUCTURE_TOLERANCE).map_err(ctx("cp-suite"))?;
    let transpose_ok = !transpose.passed && (transpose.min_eigenvalue + 1.0).abs() <= 1e-10;
    let all_ccp = rows.iter().all(|r| r.conditional_cp);
    let worst_choi = rows.iter().map(|r| r.evolution_choi_min_eigenvalue).fold(f64::INFINITY, f64::min);
    let worst_unit = rows.iter().map(|r| r.unit_defect).fold(0.0, f64::max);
    let ok = all_ccp && worst_choi >= CHOI_FLOOR && worst_unit <= UNIT_TOLERANCE && transpose_ok;
    let mut csv = String::from("index,dim,jumps,unital,conditional_cp_min_eigenvalue,conditional_cp,evolution_choi_min_eigenvalue,unit_defect\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.index, r.dim, r.jumps, r.unital, r.conditional_cp_min_eigenvalue, r.conditional_cp, r.evolution_choi_min_eigenvalue, r.unit_defect
        )
        .unwrap();
    }
    Ok(Outcome {
        verdict: pass_if(ok),
        summary: format!(
            "{count} generators: conditional CP {all_ccp}, min Choi eigenvalue {worst_choi:.3e}, unit defect {worst_unit:.3e}; transpose witness {:.12}",
            transpose.min_eigenvalue
        ),
        metrics: vec![
            Metric::new("min_evolution_choi_eigenvalue", worst_choi).judged(worst_choi >= CHOI_FLOOR),
            Metric::new("max_unit_defect", worst_unit).judged(worst_unit <= UNIT_TOLERANCE),
            Metric::new("transpose_witness", transpose.min_eigenvalue).judged(transpose_ok),
        ],
        tables: vec![("cp-suite".into(), csv)],
        documents: vec![(
            "cp-suite".into(),
            json!({ "t": t, "seed": seed, "rows": to_json(&rows), "transpose_witness": transpose.min_eigenvalue }),
        )],
    })
}

fn pauli_lowering() -> CMat {
    let mut m = CMat::zeros(2, 2);
    m[(1, 0)] = Complex64::new(1.0, 0.0);
    m
}

/// Damped qubit: `H = omega sigma_z / 2`, one jump operator `sqrt(gamma) sigma_-`.
pub fn damped_qubit(gamma: f64, omega: f64) -> Result<StandardGenerator, RunError> {
    let h = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::new(0.5 * omega, 0.0),
        Complex64::new(-0.5 * omega, 0.0),
    ]));
    StandardGenerator::unital(h, vec![pauli_lowering() * Complex64::new(gamma.sqrt(), 0.0)]).map_err(ctx("dyson"))
}

fn operator_norm(m: &CMat) -> f64 {
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

#[derive(Serialize)]
struct DysonRow {
    n: usize,
    term_norm: f64,
    bound: f64,
    ratio: Option<f64>,
}

fn dyson(gamma: f64, omega: f64, t: f64, terms: usize, tolerance: f64) -> Result<Outcome, RunError> {
    let g = damped_qubit(gamma, omega)?;
    let exact = gks::exact_evolve(&g, t);
    let exp = gks::dyson_evolve(&g, t, terms).map_err(ctx("dyson"))?;
    let error = exp.sum().max_entry_distance(&exact);
    let id = CMat::identity(2, 2);
    let rate = operator_norm(&g.jump_part().apply(&id));
    let mut rows: Vec<DysonRow> = Vec::new();
    let mut bound = 1.0;
    for (n, term) in exp.terms.iter().enumerate() {
        if n > 0 {
            bound *= rate * t / n as f64;
        }
        let norm = operator_norm(&term.apply(&id));
        let ratio = rows.last().filter(|r| r.term_norm > 0.0).map(|r| norm / r.term_norm);
        rows.push(DysonRow {
            n,
            term_norm: norm,
            bound,
            ratio,
        });
    }
    let bound_ok = rows.iter().all(|r| r.term_norm <= r.bound * (1.0 + 1e-9) + 1e-14);
    let mut csv = String::from("n,term_norm,factorial_bound,ratio\n");
    for r in &rows {
        let ratio = r.ratio.map(|x| x.to_string()).unwrap_or_default();
        writeln!(csv, "{},{},{},{}", r.n, r.term_norm, r.bound, ratio).unwrap();
    }
    Ok(Outcome {
        verdict: pass_if(error <= tolerance && bound_ok),
        summary: format!("{terms}-term error {error:.3e}; factorial bound holds: {bound_ok}"),
        metrics: vec![
            Metric::new("max_entry_error", error).judged(error <= tolerance),
            Metric::new("factorial_bound", if bound_ok { 1.0 } else { 0.0 }).judged(bound_ok),
        ],
        tables: vec![("dyson".into(), csv)],
        documents: vec![(
            "dyson".into(),
            json!({ "gamma": gamma, "omega": omega, "t": t, "terms": terms, "panels": exp.panels, "error": error, "rows": to_json(&rows), "dyson_sum": exp.sum().to_json(), "exact": exact.to_json() }),
        )],
    })
}

#[derive(Serialize)]
struct GaugeRow {
    index: usize,
    dim: usize,
    jumps: usize,
    action_distance: f64,
    group_law_defect: f64,
}

fn gauge_suite(count: usize, max_dim: usize, max_jumps: usize, seed: u64) -> Result<Outcome, RunError> {
    let mut rng = stream_rng(seed, 0);
    let mut rows = Vec::new();
    for index in 0..count {
        let (d, m) = case_shape(index, max_dim, max_jumps);
        let g = gks::random_generator(&mut rng, d, m, index % 2 == 0);
        let gauge = gks::random_gauge(&mut rng, m);
        let moved = gks::apply_gauge(&g, &gauge).map_err(ctx("gauge-suite"))?;
        let action_distance = gks::generator_action_distance(&g, &moved);
        let g1 = gks::random_gauge(&mut rng, m);
        let g2 = gks::random_gauge(&mut rng, m);
        let group_law_defect = gks::gauge_group_law_check(&g, &g1, &g2).map_err(ctx("gauge-suite"))?;
        rows.push(GaugeRow {
            index,
            dim: d,
            jumps: m,
            action_distance,
            group_law_defect,
        });
    }
    let worst_action = rows.iter().map(|r| r.action_distance).fold(0.0, f64::max);
    let worst_law = rows.iter().map(|r| r.group_law_defect).fold(0.0, f64::max);
    let ok = worst_action <= gks::STRUCTURE_TOLERANCE && worst_law <= gks::STRUCTURE_TOLERANCE;
    let mut csv = String::from("index,dim,jumps,action_distance,group_law_defect\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{},{}", r.index, r.dim, r.jumps, r.action_distance, r.group_law_defect).unwrap();
    }
    Ok(Outcome {
        verdict: pass_if(ok),
        summary: format!("{count} pairs: action distance {worst_action:.3e}, group-law defect {worst_law:.3e}"),
        metrics: vec![
            Metric::new("max_action_distance", worst_action).judged(worst_action <= gks::STRUCTURE_TOLERANCE),
            Metric::new("max_group_law_defect", worst_law).judged(worst_law <= gks::STRUCTURE_TOLERANCE),
        ],
        tables: vec![("gauge-suite".into(), csv)],
        documents: vec![("gauge-suite".into(), json!({ "seed": seed, "rows": to_json(&rows) }))],
    })
}

//! Boundary behaviour of `dX = b(X) dt + dW` on `(l, inf)`, `b = 2 Im L`.
//!
//! Feller's function
//!
//! ```text
//! F(x) = Int_{x0}^x exp( Int_x^y 2 b(z) dz ) dy
//! ```
//!
//! decides the ends: the diffusion does not reach an end (the minimal
//! semigroup keeps its trace there) iff `F` is not integrable near it.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mc::{self, McConfig};
use crate::quad::{adaptive_simpson, gauss_legendre, SimpsonConfig};
use crate::stats::{Accumulator, Estimate};
use crate::{Error, Result};

/// Closed forms for `Im L`, or a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftKind {
    Zero,
    /// `Im L = c`.
    Constant { c: f64 },
    /// `Im L = 1 / (2 (z - l))`: the radial part of 3-d Brownian motion.
    Bessel3,
    /// `Im L = -k z / 2`.
    OrnsteinUhlenbeck { k: f64 },
    /// `Im L = c z^2 / 2`; explodes to infinity for `c > 0`.
    Quadratic { c: f64 },
    /// Piecewise-linear `Im L` through `(xs, values)`, held constant beyond
    /// the end nodes.
    Table { xs: Vec<f64>, values: Vec<f64> },
}

type Func = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct DriftSpec {
    pub l: f64,
    pub x0: f64,
    pub kind: DriftKind,
    im_l: Func,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("l", &self.l)
            .field("x0", &self.x0)
            .field("kind", &self.kind)
            .finish()
    }
}

impl DriftSpec {
    pub fn new(kind: DriftKind, l: f64, x0: f64) -> Result<Self> {
        if !(l.is_finite() && x0.is_finite() && x0 > l) {
            return Err(Error::param("x0", format!("need finite l < x0 (l = {l}, x0 = {x0})")));
        }
        let im_l: Func = match &kind {
            DriftKind::Zero => Arc::new(|_| 0.0),
            &DriftKind::Constant { c } => Arc::new(move |_| c),
            DriftKind::Bessel3 => Arc::new(move |z| 0.5 / (z - l)),
            &DriftKind::OrnsteinUhlenbeck { k } => Arc::new(move |z| -0.5 * k * z),
            &DriftKind::Quadratic { c } => Arc::new(move |z| 0.5 * c * z * z),
            DriftKind::Table { xs, values } => {
                if xs.len() < 2 || xs.len() != values.len() {
                    return Err(Error::param("table", "needs at least two nodes and matching lengths"));
                }
                if xs.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::param("table", "nodes must be strictly increasing"));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::param("table", "values must be finite"));
                }
                let (xs, values) = (xs.clone(), values.clone());
                Arc::new(move |z| {
                    let i = xs.partition_point(|&x| x <= z);
                    if i == 0 {
                        values[0]
                    } else if i == xs.len() {
                        values[xs.len() - 1]
                    } else {
                        let s = (z - xs[i - 1]) / (xs[i] - xs[i - 1]);
                        values[i - 1] + s * (values[i] - values[i - 1])
                    }
                })
            }
        };
        match kind {
            DriftKind::Constant { c } | DriftKind::Quadratic { c } if !c.is_finite() => {
                return Err(Error::param("c", "must be finite"));
            }
            DriftKind::OrnsteinUhlenbeck { k } if !k.is_finite() => {
                return Err(Error::param("k", "must be finite"));
            }
            _ => {}
        }
        Ok(DriftSpec { l, x0, kind, im_l })
    }

    /// Drift of the diffusion, `b = 2 Im L`.
    pub fn drift(&self, x: f64) -> f64 {
        2.0 * (self.im_l)(x)
    }

    pub fn im_l(&self, x: f64) -> f64 {
        (self.im_l)(x)
    }
}

fn simpson() -> SimpsonConfig {
    SimpsonConfig {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_depth: 48,
    }
}

/// `F(x)` by nested adaptive quadrature.
pub fn feller_function(spec: &DriftSpec, x: f64) -> Result<f64> {
    if !(x > spec.l && x.is_finite()) {
        return Err(Error::param("x", format!("{x} is outside (l, inf)")));
    }
    if x == spec.x0 {
        return Ok(0.0);
    }
    let cfg = simpson();
    let inner = |y: f64| -> f64 {
        let (lo, hi, sign) = if y < x { (y, x, -1.0) } else { (x, y, 1.0) };
        let v: Result<f64> = adaptive_simpson(|z| 2.0 * spec.drift(z), lo, hi, cfg);
        v.map(|v| (sign * v).exp()).unwrap_or(f64::NAN)
    };
    adaptive_simpson(inner, spec.x0, x, cfg).map_err(|e| match e {
        Error::Numerical { detail, .. } => Error::Numerical {
            context: "feller_function",
            detail: format!("outer quadrature on [{}, {x}]: {detail}", spec.x0),
        },
        other => other,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndVerdict {
    NonAbsorbing,
    Absorbing,
    Inconclusive,
}

impl fmt::Display for EndVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EndVerdict::NonAbsorbing => "non-absorbing",
            EndVerdict::Absorbing => "absorbing",
            EndVerdict::Inconclusive => "inconclusive",
        })
    }
}

/// Truncated integrals of `|F|` towards one end, with the growth fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndDiagnostics {
    /// `eps_k` (distance to `l`) or `R_k`.
    pub cutoffs: Vec<f64>,
    /// `log Int |F|` over `(l + eps_k, x0)` or `(x0, R_k)`.
    pub log_integrals: Vec<f64>,
    /// Least-squares slope of log integral against log cutoff.
    pub slope: f64,
    pub r_squared: f64,
    /// Slopes between successive cutoffs.
    pub local_slopes: Vec<f64>,
    pub verdict: EndVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub drift: DriftKind,
    pub l: f64,
    pub x0: f64,
    pub left: EndDiagnostics,
    pub right: EndDiagnostics,
}

/// Divergence rule: `|slope| > 0.2` with `R^2 > 0.99` is divergent,
/// `|slope| < 0.05` convergent. Growth faster than any power (all local
/// slopes above 0.2 and increasing) also counts as divergent.
pub fn classify_growth(log_cutoffs: &[f64], log_integrals: &[f64]) -> (f64, f64, Vec<f64>, bool, bool) {
    let n = log_cutoffs.len() as f64;
    let mx = log_cutoffs.iter().sum::<f64>() / n;
    let my = log_integrals.iter().sum::<f64>() / n;
    let sxx: f64 = log_cutoffs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = log_cutoffs.iter().zip(log_integrals).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = log_integrals.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    let local: Vec<f64> = log_cutoffs
        .windows(2)
        .zip(log_integrals.windows(2))
        .map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0]))
        .collect();
    let power_law = slope.abs() > 0.2 && r2 > 0.99;
    let super_poly = local.iter().all(|s| s.abs() > 0.2)
        && local.windows(2).all(|w| w[1].abs() >= w[0].abs());
    let divergent = power_law || super_poly;
    let convergent = !divergent && slope.abs() < 0.05;
    (slope, r2, local, divergent, convergent)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Cumulative `log Int |F|` from `x0` outwards through the given shell
/// boundaries, in the log domain.
///
/// `F` solves `F' = 1 - 2b F`, `F(x0) = 0`. Each shell is cut into equal
/// substeps; over a substep the potential `Phi = Int 2b` is taken linear,
/// which makes the update exact:
/// `F(x + h) = e^{-dPhi} F(x) + h phi1(dPhi)`, `phi1(z) = (1 - e^{-z}) / z`.
/// `|F|` is integrated by the trapezoid rule, or log-linearly across substeps where
/// it changes by more than a factor `e`. Both stay finite
/// when `F` grows like `e^{x^2}` or decays like `1/b`.
struct LogStepIntegrator<'a> {
    spec: &'a DriftSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

const SUBSTEPS_PER_SHELL: usize = 1024;

/// `log phi1(z)`.
fn log_phi1(z: f64) -> f64 {
    if z.abs() < 1e-12 {
        -0.5 * z
    } else if z > 0.0 {
        (-(-z).exp_m1()).ln() - z.ln()
    } else {
        let w = -z;
        w + (-(-w).exp_m1()).ln() - w.ln()
    }
}

impl<'a> LogStepIntegrator<'a> {
    fn new(spec: &'a DriftSpec) -> Self {
        let (nodes, weights) = gauss_legendre(8);
        LogStepIntegrator { spec, nodes, weights }
    }

    fn potential_step(&self, a: f64, c: f64) -> f64 {
        let hw = 0.5 * (c - a);
        let mid = 0.5 * (a + c);
        hw * self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * 2.0 * self.spec.drift(mid + hw * x))
            .sum::<f64>()
    }

    /// Returns `log Int |F|` accumulated up to each of `boundaries`
    /// (ordered away from `x0`).
    fn run(&self, boundaries: &[f64]) -> Vec<f64> {
        let mut log_f = f64::NEG_INFINITY; // log |F|
        let mut log_j = f64::NEG_INFINITY; // log Int |F|
        let mut out = Vec::with_capacity(boundaries.len());
        let mut x = self.spec.x0;
        for &end in boundaries {
            let h = (end - x) / SUBSTEPS_PER_SHELL as f64;
            let log_h = h.abs().ln();
            for k in 0..SUBSTEPS_PER_SHELL {
                let a = x + h * k as f64;
                let c = if k + 1 == SUBSTEPS_PER_SHELL { end } else { a + h };
                let dphi = self.potential_step(a, c);
                let next = log_add(log_f - dphi, log_h + log_phi1(dphi));
                let gap = (next - log_f).abs();
                let seg = if gap < 1.0 || log_f == f64::NEG_INFINITY {
                    log_h + log_add(log_f, next) - 2f64.ln()
                } else {
                    log_h + log_f.max(next) + log_phi1(gap)
                };
                log_j = log_add(log_j, seg);
                log_f = next;
            }
            out.push(log_j);
            x = end;
        }
        out
    }
}

/// Dyadic exponents used for the two ends.
pub const LEFT_LEVELS: std::ops::RangeInclusive<i32> = 6..=14;
pub const RIGHT_LEVELS: std::ops::RangeInclusive<i32> = 2..=10;

fn diagnostics(cutoffs: Vec<f64>, log_integrals: Vec<f64>, fit_start: usize) -> EndDiagnostics {
    let lc: Vec<f64> = cutoffs[fit_start..].iter().map(|c| c.ln()).collect();
    let li = &log_integrals[fit_start..];
    let (slope, r_squared, local_slopes, divergent, convergent) = if li.iter().all(|v| v.is_finite()) {
        classify_growth(&lc, li)
    } else {
        (f64::NAN, 0.0, Vec::new(), false, false)
    };
    let verdict = if divergent {
        EndVerdict::NonAbsorbing
    } else if convergent {
        EndVerdict::Absorbing
    } else {
        EndVerdict::Inconclusive
    };
    EndDiagnostics {
        cutoffs: cutoffs[fit_start..].to_vec(),
        log_integrals: li.to_vec(),
        slope,
        r_squared,
        local_slopes,
        verdict,
    }
}

/// Feller's test at both ends.
pub fn feller_test(spec: &DriftSpec) -> BoundaryReport {
    let integ = LogStepIntegrator::new(spec);
    let d = spec.x0 - spec.l;
    // left: eps_k = d 2^{-k}, k = 1..=14, fitted over LEFT_LEVELS
    let left_k: Vec<i32> = (1..=*LEFT_LEVELS.end()).collect();
    let eps: Vec<f64> = left_k.iter().map(|&k| d * 2f64.powi(-k)).collect();
    let left_bounds: Vec<f64> = eps.iter().map(|e| spec.l + e).collect();
    let left_logs = integ.run(&left_bounds);
    let left_start = left_k.iter().position(|k| k == LEFT_LEVELS.start()).unwrap_or(0);
    // right: R_k = l + d 2^k, k = 1..=10
    let right_k: Vec<i32> = (1..=*RIGHT_LEVELS.end()).collect();
    let radii: Vec<f64> = right_k.iter().map(|&k| spec.l + d * 2f64.powi(k)).collect();
    let right_logs = integ.run(&radii);
    let right_start = right_k.iter().position(|k| k == RIGHT_LEVELS.start()).unwrap_or(0);
    BoundaryReport {
        drift: spec.kind.clone(),
        l: spec.l,
        x0: spec.x0,
        left: diagnostics(eps, left_logs, left_start),
        right: diagnostics(radii, right_logs, right_start),
    }
}

/// Boundary behaviour of the simulated paths at `l`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryRule {
    /// Killed at the first crossing (minimal semigroup).
    Absorbing,
    /// `X -> |X - l| + l` after each step.
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillOptions {
    pub rule: BoundaryRule,
    /// Brownian-bridge crossing correction between grid points.
    pub bridge: bool,
    /// Paths above this level count as exploded (killed at infinity).
    pub explosion_cap: f64,
    /// Number of equally spaced times in the survival curve.
    pub curve_points: usize,
}

impl Default for KillOptions {
    fn default() -> Self {
        KillOptions {
            rule: BoundaryRule::Absorbing,
            bridge: true,
            explosion_cap: 1e6,
            curve_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPoint {
    pub t: f64,
    pub survival: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KilledDiffusionResult {
    pub survival: Estimate,
    pub curve: Vec<SurvivalPoint>,
    pub killed_at_l: f64,
    pub killed_at_infinity: f64,
    /// Fraction of paths that hit the minimum step size.
    pub floor_limited: f64,
    pub warnings: Vec<String>,
}

/// Smallest step relative to the nominal `dt`.
const STEP_FLOOR: f64 = 1e-10;

/// Step used at `x`: the nominal `dt`, refined where the drift moves the path
/// by more than a tenth of its distance to `l`.
fn local_step(spec: &DriftSpec, x: f64, dt: f64) -> (f64, bool) {
    let dist = x - spec.l;
    let b = spec.drift(x).abs();
    if b * dt <= 0.1 * dist {
        return (dt, false);
    }
    let h = dt.min(0.01 * dist * dist).min(0.1 * dist / b);
    let floor = dt * STEP_FLOOR;
    if h < floor {
        (floor, true)
    } else {
        (h, false)
    }
}

enum Fate {
    Survived,
    KilledAtL(f64),
    Exploded(f64),
}

fn simulate_path<R: Rng + ?Sized>(spec: &DriftSpec, x_start: f64, t: f64, dt: f64, opts: &KillOptions, rng: &mut R) -> (Fate, bool) {
    let mut x = x_start;
    let mut s = 0.0;
    let mut floored = false;
    while s < t {
        let (h, f) = local_step(spec, x, dt);
        floored |= f;
        let h = h.min(t - s);
        let z: f64 = StandardNormal.sample(rng);
        let mut next = x + spec.drift(x) * h + h.sqrt() * z;
        s += h;
        match opts.rule {
            BoundaryRule::Absorbing => {
                if next <= spec.l {
                    return (Fate::KilledAtL(s), floored);
                }
                if opts.bridge {
                    let p = (-2.0 * (x - spec.l) * (next - spec.l) / h).exp();
                    if rng.random::<f64>() < p {
                        return (Fate::KilledAtL(s), floored);
                    }
                }
            }
            BoundaryRule::Reflecting => {
                next = (next - spec.l).abs() + spec.l;
            }
        }
        if !next.is_finite() || next > opts.explosion_cap {
            return (Fate::Exploded(s), floored);
        }
        x = next;
    }
    (Fate::Survived, floored)
}

#[derive(Clone)]
struct KillAcc {
    curve: Vec<Accumulator>,
    at_l: usize,
    at_inf: usize,
    floored: usize,
}

pub fn simulate_killed_diffusion(
    spec: &DriftSpec,
    x_start: f64,
    t: f64,
    dt: f64,
    opts: &KillOptions,
    mc: &McConfig,
) -> Result<KilledDiffusionResult> {
    if !(x_start > spec.l) {
        return Err(Error::param("x_start", "must lie above l"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    if opts.curve_points == 0 {
        return Err(Error::param("curve_points", "must be positive"));
    }
    let mut warnings = Vec::new();
    let b0 = spec.drift(x_start).abs();
    if b0 * dt > 0.1 * (x_start - spec.l) {
        warnings.push(format!(
            "dt = {dt} is coarse against the drift at x_start (|b| dt = {:.3e}); steps are refined near l",
            b0 * dt
        ));
    }
    let times: Vec<f64> = (1..=opts.curve_points).map(|k| t * k as f64 / opts.curve_points as f64).collect();
    let n = times.len();
    let acc = mc::map_reduce(
        mc,
        || KillAcc {
            curve: vec![Accumulator::new(); n],
            at_l: 0,
            at_inf: 0,
            floored: 0,
        },
        |_, rng, acc| {
            let (fate, floored) = if t == 0.0 {
                (Fate::Survived, false)
            } else {
                simulate_path(spec, x_start, t, dt, opts, rng)
            };
            let death = match fate {
                Fate::Survived => f64::INFINITY,
                Fate::KilledAtL(s) => {
                    acc.at_l += 1;
                    s
                }
                Fate::Exploded(s) => {
                    acc.at_inf += 1;
                    s
                }
            };
            acc.floored += floored as usize;
            for (a, &ti) in acc.curve.iter_mut().zip(&times) {
                a.push(if death > ti { 1.0 } else { 0.0 });
            }
            Ok(())
        },
        |a, b| {
            for (x, y) in a.curve.iter_mut().zip(&b.curve) {
                x.merge(y);
            }
            a.at_l += b.at_l;
            a.at_inf += b.at_inf;
            a.floored += b.floored;
        },
    )?;
    let total = mc.n_paths as f64;
    if acc.floored > 0 {
        warnings.push(format!("{} paths reached the minimum step size", acc.floored));
    }
    let curve: Vec<SurvivalPoint> = times
        .iter()
        .zip(&acc.curve)
        .map(|(&t, a)| SurvivalPoint {
            t,
            survival: a.mean(),
            stderr: a.stderr(),
        })
        .collect();
    let last = acc.curve[n - 1].estimate();
    Ok(KilledDiffusionResult {
        survival: last,
        curve,
        killed_at_l: acc.at_l as f64 / total,
        killed_at_infinity: acc.at_inf as f64 / total,
        floor_limited: acc.floored as f64 / total,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDecayReport {
    pub x_start: f64,
    /// `Tr Psi_t[rho]` of the minimal semigroup, i.e. the killed survival.
    pub minimal: Vec<SurvivalPoint>,
    /// Survival with reflection at `l`.
    pub reflecting: Vec<SurvivalPoint>,
    /// Largest `(reflecting - minimal) / joint stderr` over the times.
    pub max_separation: f64,
    /// Separation above 5 joint standard errors at some time.
    pub non_uniqueness_witnessed: bool,
}

pub fn trace_decay_link(
    spec: &DriftSpec,
    x_start: f64,
    t: f64,
    dt: f64,
    curve_points: usize,
    mc: &McConfig,
) -> Result<TraceDecayReport> {
    let base = KillOptions {
        curve_points,
        ..KillOptions::default()
    };
    let minimal = simulate_killed_diffusion(spec, x_start, t, dt, &base, mc)?;
    let reflecting = simulate_killed_diffusion(
        spec,
        x_start,
        t,
        dt,
        &KillOptions {
            rule: BoundaryRule::Reflecting,
            bridge: false,
            ..base
        },
        &mc.reseeded(1),
    )?;
    let max_separation = minimal
        .curve
        .iter()
        .zip(&reflecting.curve)
        .map(|(a, b)| {
            let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
            let d = b.survival - a.survival;
            if se > 0.0 {
                d / se
            } else if d > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    Ok(TraceDecayReport {
        x_start,
        minimal: minimal.curve,
        reflecting: reflecting.curve,
        max_separation,
        non_uniqueness_witnessed: max_separation > 5.0,
    })
}

pub fn write_survival_csv<W: Write>(curve: &[SurvivalPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,survival,stderr")?;
    for p in curve {
        writeln!(out, "{},{},{}", p.t, p.survival, p.stderr)?;
    }
    Ok(())
}

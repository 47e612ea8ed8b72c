//! Noise-averaged shift dynamics `Phi_t[X] = M U*_{xi_t} X U_{xi_t}`.
//!
//! The law of `xi_t` at a single time is all that enters, so every estimate
//! here draws one exact increment per path; there is no time stepping.

use std::io::Write;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{expectation_raw, GridSpec, Lattice, Observable, WaveFunction, SUPPORT_TOLERANCE};
use crate::levy::{dyadic_shells, LevySampler1D, LevyTriplet1D};
use crate::mc::{self, McConfig};
use crate::quad::{adaptive_simpson, SimpsonConfig};
use crate::rng::PathRng;
use crate::stats::{Accumulator, ComplexAccumulator, ComplexEstimate};
use crate::{Error, Result};

/// Runs abort when more than this fraction of paths overflow the grid.
pub const MAX_OVERFLOW_FRACTION: f64 = 0.01;

/// The O(t) band is this multiple of the Richardson bias estimate; the
/// excess covers the unresolved O(t^2) remainder.
pub const BIAS_ALLOWANCE: f64 = 1.5;

#[derive(Debug, Clone)]
pub struct NoiseSemigroupSpec {
    pub triplet: LevyTriplet1D,
    pub grid: GridSpec,
}

impl NoiseSemigroupSpec {
    pub fn new(triplet: LevyTriplet1D, grid: GridSpec) -> Result<Self> {
        triplet.validate()?;
        grid.validate()?;
        Ok(NoiseSemigroupSpec { triplet, grid })
    }

    /// Antithetic pairs `(xi, -xi)` are used exactly when the law is symmetric.
    pub fn antithetic(&self) -> bool {
        self.triplet.is_symmetric()
    }

    fn check_state(&self, psi: &WaveFunction) -> Result<()> {
        if *psi.grid() != self.grid {
            return Err(Error::param("psi", "state lives on a different grid"));
        }
        let norm = psi.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::param("psi", format!("must be normalized (norm {norm})")));
        }
        Ok(())
    }
}

/// Shift `psi` by each of `shifts`; `overflow` is set when any shifted copy
/// leaves mass in the boundary layer.
fn shifted_copies(psi: &WaveFunction, shifts: &[f64], overflow: &mut bool) -> Vec<WaveFunction> {
    let lattice = psi.lattice().clone();
    shifts
        .iter()
        .map(|&x| {
            let mut s = psi.clone();
            lattice.momentum_phase_in_place(s.amplitudes_mut(), x, 0.0);
            if lattice.boundary_mass(s.amplitudes()) > SUPPORT_TOLERANCE {
                *overflow = true;
            }
            s
        })
        .collect()
}

fn path_shifts(sampler: &LevySampler1D, t: f64, antithetic: bool, rng: &mut PathRng) -> Vec<f64> {
    let xi = if t == 0.0 { 0.0 } else { sampler.increment(t, 0.0, rng, None) };
    if antithetic {
        vec![xi, -xi]
    } else {
        vec![xi]
    }
}

fn overflow_guard(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > MAX_OVERFLOW_FRACTION * total as f64 {
        return Err(Error::TooManyOverflows { failed, total });
    }
    Ok(())
}

/// Heisenberg-picture estimate with run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergEstimate {
    pub estimate: ComplexEstimate,
    /// No Monte Carlo error applies (`g(P)` observables, `t = 0`).
    pub exact: bool,
    pub antithetic: bool,
    pub overflow_paths: usize,
}

#[derive(Default, Clone, Copy)]
struct OverflowAcc {
    values: ComplexAccumulator,
    overflow: usize,
}

/// `<psi|Phi_t[X]|psi>` by one exact increment per path.
pub fn mc_heisenberg_expectation(
    spec: &NoiseSemigroupSpec,
    psi: &WaveFunction,
    observable: &Observable,
    t: f64,
    mc: &McConfig,
) -> Result<HeisenbergEstimate> {
    spec.check_state(psi)?;
    mc.validate()?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    if let Observable::Position(v) | Observable::Momentum(v) = observable {
        if v.len() != spec.grid.n_points {
            return Err(Error::DimensionMismatch {
                expected: spec.grid.n_points,
                got: v.len(),
            });
        }
    }
    let antithetic = spec.antithetic();
    if matches!(observable, Observable::Momentum(_)) || t == 0.0 {
        // functions of P commute with every shift
        let value = expectation_raw(psi, observable);
        return Ok(HeisenbergEstimate {
            estimate: ComplexEstimate {
                value,
                stderr: 0.0,
                n: mc.n_paths,
            },
            exact: true,
            antithetic,
            overflow_paths: 0,
        });
    }
    let sampler = LevySampler1D::new(&spec.triplet)?;
    let acc = mc::map_reduce(
        mc,
        OverflowAcc::default,
        |_, rng, acc| {
            let shifts = path_shifts(&sampler, t, antithetic, rng);
            let mut overflow = false;
            let states = shifted_copies(psi, &shifts, &mut overflow);
            let n = states.len() as f64;
            let v: Complex64 = states.iter().map(|s| expectation_raw(s, observable)).sum::<Complex64>() / n;
            acc.values.push(v);
            acc.overflow += overflow as usize;
            Ok(())
        },
        |a, b| {
            a.values.merge(&b.values);
            a.overflow += b.overflow;
        },
    )?;
    overflow_guard(acc.overflow, mc.n_paths)?;
    Ok(HeisenbergEstimate {
        estimate: acc.values.estimate(),
        exact: false,
        antithetic,
        overflow_paths: acc.overflow,
    })
}

/// Per-path shifted states representing `Psi_t[|psi><psi|]`.
#[derive(Debug, Clone)]
pub struct McEnsemble {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// `xi_t` for each path (the antithetic partner is its negative).
    pub shifts: Vec<f64>,
    /// `states_per_path` consecutive states per path.
    pub states: Vec<WaveFunction>,
    pub overflow_paths: usize,
}

impl McEnsemble {
    pub fn states_per_path(&self) -> usize {
        if self.antithetic {
            2
        } else {
            1
        }
    }

    pub fn path_states(&self, path: usize) -> &[WaveFunction] {
        let k = self.states_per_path();
        &self.states[path * k..(path + 1) * k]
    }

    /// Ensemble average of `<psi_path|X|psi_path>`; identical arithmetic to
    /// [`mc_heisenberg_expectation`].
    pub fn expectation(&self, observable: &Observable) -> ComplexEstimate {
        let k = self.states_per_path();
        let mut acc = ComplexAccumulator::new();
        let chunk = 512;
        // merge in the same chunk structure as the Heisenberg estimator
        for lo in (0..self.n_paths).step_by(chunk) {
            let mut part = ComplexAccumulator::new();
            for path in lo..(lo + chunk).min(self.n_paths) {
                let v: Complex64 = self
                    .path_states(path)
                    .iter()
                    .map(|s| expectation_raw(s, observable))
                    .sum::<Complex64>()
                    / k as f64;
                part.push(v);
            }
            acc.merge(&part);
        }
        acc.estimate()
    }

    /// Averaged density matrix coarse-grained onto `d` position bins of
    /// width `bin_width` starting at `x_lo`: `c_j = <e_j|psi>` with `e_j`
    /// the normalized bin indicator.
    pub fn coarse_density(&self, d: usize, x_lo: f64, bin_width: f64) -> Result<DMatrix<Complex64>> {
        if d == 0 || !(bin_width > 0.0) {
            return Err(Error::param("coarse grid", "needs d > 0 and a positive bin width"));
        }
        let mut rho = DMatrix::<Complex64>::zeros(d, d);
        let weight = 1.0 / self.states.len() as f64;
        for s in &self.states {
            let c = coarse_amplitudes(s, d, x_lo, bin_width);
            rho += &c * c.adjoint() * Complex64::new(weight, 0.0);
        }
        Ok(rho)
    }

    /// `Tr rho^2 / (Tr rho)^2` of [`Self::coarse_density`].
    pub fn coarse_purity(&self, d: usize, x_lo: f64, bin_width: f64) -> Result<f64> {
        let rho = self.coarse_density(d, x_lo, bin_width)?;
        Ok(purity(&rho))
    }
}

pub(crate) fn coarse_amplitudes(psi: &WaveFunction, d: usize, x_lo: f64, bin_width: f64) -> nalgebra::DVector<Complex64> {
    let dx = psi.grid().dx;
    let mut c = nalgebra::DVector::<Complex64>::zeros(d);
    let mut counts = vec![0usize; d];
    for (&x, a) in psi.lattice().positions().iter().zip(psi.amplitudes()) {
        let j = ((x - x_lo) / bin_width).floor();
        if j >= 0.0 && (j as usize) < d {
            c[j as usize] += a;
            counts[j as usize] += 1;
        }
    }
    for (cj, &n) in c.iter_mut().zip(&counts) {
        if n > 0 {
            *cj *= (dx / n as f64).sqrt();
        }
    }
    c
}

pub fn purity(rho: &DMatrix<Complex64>) -> f64 {
    let tr: f64 = rho.diagonal().iter().map(|z| z.re).sum();
    let tr2: f64 = rho.iter().map(|z| z.norm_sqr()).sum();
    tr2 / (tr * tr)
}

/// Default coarse window: 16 bins of width `max(sd(Q), dx)` centred on `<Q>`.
pub fn default_coarse_window(psi: &WaveFunction) -> (usize, f64, f64) {
    let d = 16;
    let mean = psi.mean_position();
    let dx = psi.grid().dx;
    let var: f64 = psi
        .lattice()
        .positions()
        .iter()
        .zip(psi.amplitudes())
        .map(|(&x, a)| a.norm_sqr() * (x - mean).powi(2))
        .sum::<f64>()
        * dx;
    let width = var.sqrt().max(dx);
    (d, mean - 0.5 * d as f64 * width, width)
}

/// `psi_path = U_{xi_t} psi` for every path.
pub fn mc_evolve_state_ensemble(spec: &NoiseSemigroupSpec, psi: &WaveFunction, t: f64, mc: &McConfig) -> Result<McEnsemble> {
    spec.check_state(psi)?;
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let antithetic = spec.antithetic();
    let sampler = LevySampler1D::new(&spec.triplet)?;
    let per_path = mc::collect_paths(mc, |_, rng| {
        let shifts = path_shifts(&sampler, t, antithetic, rng);
        let mut overflow = false;
        let states = shifted_copies(psi, &shifts, &mut overflow);
        Ok((shifts[0], states, overflow))
    })?;
    let mut shifts = Vec::with_capacity(mc.n_paths);
    let mut states = Vec::with_capacity(mc.n_paths * if antithetic { 2 } else { 1 });
    let mut overflow_paths = 0;
    for (xi, s, o) in per_path {
        shifts.push(xi);
        states.extend(s);
        overflow_paths += o as usize;
    }
    overflow_guard(overflow_paths, mc.n_paths)?;
    Ok(McEnsemble {
        n_paths: mc.n_paths,
        seed: mc.seed,
        antithetic,
        shifts,
        states,
        overflow_paths,
    })
}

/// Function sampled on a uniform grid `x0 + k dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledFunction {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl SampledFunction {
    pub fn from_fn(f: impl Fn(f64) -> f64, x0: f64, dx: f64, n: usize) -> Result<Self> {
        if n < 5 || !(dx > 0.0) {
            return Err(Error::param("table", "needs at least 5 points and dx > 0"));
        }
        Ok(SampledFunction {
            x0,
            dx,
            values: (0..n).map(|k| f(x0 + k as f64 * dx)).collect(),
        })
    }

    fn x_max(&self) -> f64 {
        self.x0 + (self.values.len() - 1) as f64 * self.dx
    }

    fn out_of_range(&self, x: f64) -> Error {
        Error::param(
            "stencil",
            format!("point {x} needs values outside the table [{}, {}]", self.x0, self.x_max()),
        )
    }

    /// Cubic Lagrange interpolation (exact at nodes).
    pub fn eval(&self, x: f64) -> Result<f64> {
        let r = (x - self.x0) / self.dx;
        let k = r.round();
        if (r - k).abs() < 1e-9 && k >= 0.0 && (k as usize) < self.values.len() {
            return Ok(self.values[k as usize]);
        }
        let base = r.floor() as isize - 1;
        if base < 0 || base as usize + 3 >= self.values.len() {
            return Err(self.out_of_range(x));
        }
        let s = r - (base + 1) as f64;
        let v = |i: usize| self.values[base as usize + i];
        let w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
        let w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
        let w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
        let w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
        Ok(w0 * v(0) + w1 * v(1) + w2 * v(2) + w3 * v(3))
    }

    /// Fourth-order central first and second derivatives at a node.
    pub fn derivatives(&self, x: f64) -> Result<(f64, f64)> {
        let r = (x - self.x0) / self.dx;
        let k = r.round();
        if (r - k).abs() > 1e-9 {
            return Err(Error::param("stencil", format!("{x} is not a table node")));
        }
        if k < 2.0 || k as usize + 2 >= self.values.len() {
            return Err(self.out_of_range(x));
        }
        let k = k as usize;
        let f = |o: isize| self.values[(k as isize + o) as usize];
        let h = self.dx;
        let d1 = (f(-2) - 8.0 * f(-1) + 8.0 * f(1) - f(2)) / (12.0 * h);
        let d2 = (-f(-2) + 16.0 * f(-1) - 30.0 * f(0) + 16.0 * f(1) - f(2)) / (12.0 * h * h);
        Ok((d1, d2))
    }
}

/// `beta f'(x) + alpha/2 f''(x) + Int [f(x+y) - f(x) - y f'(x) 1_h(y)] nu(dy)`.
pub fn classical_generator_apply(triplet: &LevyTriplet1D, f: &SampledFunction, x: f64) -> Result<f64> {
    triplet.validate()?;
    let (d1, d2) = f.derivatives(x)?;
    let fx = f.eval(x)?;
    let mut out = triplet.beta * d1 + 0.5 * triplet.alpha * d2;
    for a in &triplet.jumps.atoms {
        let comp = if a.location.abs() <= triplet.h { a.location * d1 } else { 0.0 };
        out += a.rate * (f.eval(x + a.location)? - fx - comp);
    }
    if let Some(d) = &triplet.jumps.density {
        // probe the range once so quadrature closures can stay infallible
        f.eval(x - d.max_jump)?;
        f.eval(x + d.max_jump)?;
        let g = |y: f64| f.eval(x + y).unwrap_or(f64::NAN) - fx;
        let small_top = triplet.h.min(d.max_jump);
        // below a few grid spacings the table cannot resolve f(x+y) - f(x) - y f'(x);
        // use the local quadratic model there
        let y_c = (4.0 * f.dx).min(small_top);
        let (taylor, _) = dyadic_shells(|y: f64| 0.5 * y * y * d2 * (d.value(y) + d.value(-y)), y_c)?;
        out += taylor;
        if small_top > y_c {
            let resolved: f64 = adaptive_simpson(
                |y| (g(y) - y * d1) * d.value(y) + (g(-y) + y * d1) * d.value(-y),
                y_c,
                small_top,
                SimpsonConfig::default(),
            )?;
            out += resolved;
        }
        if d.max_jump > triplet.h {
            let big: f64 = adaptive_simpson(
                |y| g(y) * d.value(y) + g(-y) * d.value(-y),
                triplet.h,
                d.max_jump,
                SimpsonConfig::default(),
            )?;
            out += big;
        }
    }
    if !out.is_finite() {
        return Err(Error::numerical("classical_generator_apply", "non-finite result"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorPoint {
    pub x: f64,
    pub generator: f64,
    /// `[M f(x + xi_t) - f(x)] / t`.
    pub quotient: f64,
    pub stderr: f64,
    /// Richardson estimate of the O(t) bias, `2 (D(t) - D(t/2))`.
    pub bias: f64,
    pub bias_stderr: f64,
}

impl GeneratorPoint {
    pub fn deviation(&self) -> f64 {
        (self.quotient - self.generator).abs()
    }

    pub fn noise_band(&self) -> f64 {
        4.0 * (self.stderr.powi(2) + self.bias_stderr.powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub t: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub points: Vec<GeneratorPoint>,
    pub max_deviation: f64,
    /// `BIAS_ALLOWANCE` times the largest `|bias|` over the points.
    pub bias_band: f64,
    /// Largest excess of the deviation over the pointwise noise band.
    pub max_excess: f64,
    pub verdict: Verdict,
}

/// Compares the small-time difference quotient of the semigroup on `f(Q)`
/// with the generator at `points`.
///
/// `Phi_t[f(Q)] = f(Q + xi_t)` pointwise, so the quotient at `x` is an
/// average over paths of `(f(x + xi_t) - f(x)) / t`. Each path also carries
/// its midpoint value `xi_{t/2}` for the Richardson bias estimate. The check
/// passes when `max_x (dev - 4 sigma) <= 1.5 max_x |bias|`; it is inconclusive
/// when the noise band exceeds half the generator's scale.
pub fn generator_consistency_check(
    spec: &NoiseSemigroupSpec,
    f: &SampledFunction,
    points: &[f64],
    t_small: f64,
    mc: &McConfig,
) -> Result<GeneratorReport> {
    if !(t_small > 0.0 && t_small.is_finite()) {
        return Err(Error::param("t_small", "must be positive"));
    }
    if points.is_empty() {
        return Err(Error::Empty("generator check points"));
    }
    let exact: Vec<f64> = points
        .iter()
        .map(|&x| classical_generator_apply(&spec.triplet, f, x))
        .collect::<Result<_>>()?;
    let fx: Vec<f64> = points.iter().map(|&x| f.eval(x)).collect::<Result<_>>()?;
    let sampler = LevySampler1D::new(&spec.triplet)?;
    let antithetic = spec.antithetic();
    let n = points.len();
    let half = 0.5 * t_small;
    let accs = mc::map_reduce(
        mc,
        || vec![(Accumulator::new(), Accumulator::new()); n],
        |_, rng, accs| {
            let a = sampler.increment(half, 0.0, rng, None);
            let b = sampler.increment(half, half, rng, None);
            let signs: &[f64] = if antithetic { &[1.0, -1.0] } else { &[1.0] };
            for (k, (acc_q, acc_b)) in accs.iter_mut().enumerate() {
                let mut q = 0.0;
                let mut bias = 0.0;
                for &s in signs {
                    let full = (f.eval(points[k] + s * (a + b))? - fx[k]) / t_small;
                    let mid = (f.eval(points[k] + s * a)? - fx[k]) / half;
                    q += full;
                    bias += 2.0 * (full - mid);
                }
                acc_q.push(q / signs.len() as f64);
                acc_b.push(bias / signs.len() as f64);
            }
            Ok(())
        },
        |a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.0.merge(&y.0);
                x.1.merge(&y.1);
            }
        },
    )?;
    let pts: Vec<GeneratorPoint> = points
        .iter()
        .zip(&exact)
        .zip(&accs)
        .map(|((&x, &g), (q, b))| GeneratorPoint {
            x,
            generator: g,
            quotient: q.mean(),
            stderr: q.stderr(),
            bias: b.mean(),
            bias_stderr: b.stderr(),
        })
        .collect();
    let max_deviation = pts.iter().map(GeneratorPoint::deviation).fold(0.0, f64::max);
    let bias_band = BIAS_ALLOWANCE * pts.iter().map(|p| p.bias.abs()).fold(0.0, f64::max);
    let max_excess = pts.iter().map(|p| p.deviation() - p.noise_band()).fold(f64::NEG_INFINITY, f64::max);
    let scale = exact.iter().map(|g| g.abs()).fold(0.0, f64::max);
    let max_noise = pts.iter().map(GeneratorPoint::noise_band).fold(0.0, f64::max);
    let verdict = if max_noise > 0.5 * scale {
        Verdict::Inconclusive
    } else if max_excess <= bias_band {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(GeneratorReport {
        t: t_small,
        n_paths: mc.n_paths,
        seed: mc.seed,
        antithetic,
        points: pts,
        max_deviation,
        bias_band,
        max_excess,
        verdict,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceDefect {
    /// Largest per-path difference.
    pub max_path_defect: f64,
    /// Difference of the two averages.
    pub mean_defect: f64,
}

/// Per-path comparison of `<psi|Phi_t[V_y* X V_y]|psi>` and
/// `<V_y psi|Phi_t[X]|V_y psi>` on shared increments.
pub fn momentum_covariance_check(
    spec: &NoiseSemigroupSpec,
    psi: &WaveFunction,
    observable: &Observable,
    y: f64,
    t: f64,
    mc: &McConfig,
) -> Result<CovarianceDefect> {
    spec.check_state(psi)?;
    if y == 0.0 {
        return Ok(CovarianceDefect {
            max_path_defect: 0.0,
            mean_defect: 0.0,
        });
    }
    let sampler = LevySampler1D::new(&spec.triplet)?;
    let lattice: Arc<Lattice> = psi.lattice().clone();
    let mut boosted = psi.clone();
    lattice.position_phase_in_place(boosted.amplitudes_mut(), y);
    let diffs = mc::collect_paths(mc, |_, rng| {
        let xi = if t == 0.0 { 0.0 } else { sampler.increment(t, 0.0, rng, None) };
        // V_y U_xi psi
        let mut a = psi.clone();
        lattice.momentum_phase_in_place(a.amplitudes_mut(), xi, 0.0);
        lattice.position_phase_in_place(a.amplitudes_mut(), y);
        // U_xi V_y psi
        let mut b = boosted.clone();
        lattice.momentum_phase_in_place(b.amplitudes_mut(), xi, 0.0);
        let ea = expectation_raw(&a, observable);
        let eb = expectation_raw(&b, observable);
        Ok((ea, eb))
    })?;
    let mut max_path_defect: f64 = 0.0;
    let (mut sa, mut sb) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    for (ea, eb) in &diffs {
        max_path_defect = max_path_defect.max((ea - eb).norm());
        sa += ea;
        sb += eb;
    }
    Ok(CovarianceDefect {
        max_path_defect,
        mean_defect: ((sa - sb) / diffs.len() as f64).norm(),
    })
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub t: f64,
    pub observable: String,
    pub value: Complex64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "t,observable,re,im,stderr,n_paths,seed")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t, r.observable, r.value.re, r.value.im, r.stderr, r.n_paths, r.seed
        )?;
    }
    Ok(())
}

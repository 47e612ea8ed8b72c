//! Lévy triplets, Lévy–Khinchin exponents and exact increment samplers.
//!
//! A one-dimensional process is described by its drift `beta`, diffusion
//! rate `alpha`, jump measure and truncation radius `h`:
//!
//! ```text
//! eta(l) = i beta l - alpha/2 l^2 + Int (e^{i y l} - 1 - i y l 1_h(y)) mu(dy)
//! ```
//!
//! with `1_h` the indicator of the closed ball `|y| <= h`. Atoms sitting
//! exactly on `|y| = h` therefore count as compensated small jumps.
//!
//! Jump measures are finite lists of atoms, optionally completed by a density
//! on `0 < |y| <= max_jump`. Atoms are sampled exactly. Density jumps below
//! the cutoff `epsilon` are replaced by their compensating drift and, when
//! requested, a Gaussian with the matching variance.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::mc::{self, McConfig};
use crate::quad::{adaptive_simpson, SimpsonConfig};
use crate::rng::{stream_rng, PathRng};
use crate::stats::{Accumulator, Estimate};
use crate::{Error, Result};

/// Truncation radius used when none is given.
pub const DEFAULT_TRUNCATION: f64 = 1.0;

/// Tolerance for the positive-semidefiniteness test of diffusion matrices.
pub const PSD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom2 {
    pub location: [f64; 2],
    pub rate: f64,
}

impl Atom2 {
    pub fn norm(&self) -> f64 {
        self.location[0].hypot(self.location[1])
    }
}

type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Absolutely continuous part of a one-dimensional jump measure.
#[derive(Clone)]
pub struct JumpDensity {
    density: DensityFn,
    /// Jumps with `|y| <= epsilon` are not sampled individually.
    pub epsilon: f64,
    /// The density vanishes for `|y| > max_jump`.
    pub max_jump: f64,
    /// Replace the removed small jumps by a Gaussian of matching variance.
    pub gaussian_correction: bool,
    /// Whether `density(y) == density(-y)`; enables antithetic sampling.
    pub symmetric: bool,
    pub label: String,
}

impl fmt::Debug for JumpDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpDensity")
            .field("label", &self.label)
            .field("epsilon", &self.epsilon)
            .field("max_jump", &self.max_jump)
            .field("gaussian_correction", &self.gaussian_correction)
            .finish()
    }
}

impl JumpDensity {
    pub fn new(
        label: impl Into<String>,
        density: impl Fn(f64) -> f64 + Send + Sync + 'static,
        epsilon: f64,
        max_jump: f64,
        gaussian_correction: bool,
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be positive and finite"));
        }
        if !(max_jump > epsilon && max_jump.is_finite()) {
            return Err(Error::param("max_jump", "must be finite and exceed epsilon"));
        }
        Ok(JumpDensity {
            density: Arc::new(density),
            epsilon,
            max_jump,
            gaussian_correction,
            symmetric: false,
            label: label.into(),
        })
    }

    /// Symmetric power law `scale * |y|^(-1-index)` on `0 < |y| <= max_jump`.
    pub fn power_law(
        scale: f64,
        index: f64,
        epsilon: f64,
        max_jump: f64,
        gaussian_correction: bool,
    ) -> Result<Self> {
        if !(scale > 0.0) {
            return Err(Error::param("scale", "must be positive"));
        }
        let mut d = JumpDensity::new(
            format!("power-law(scale={scale}, index={index})"),
            move |y: f64| scale * y.abs().powf(-1.0 - index),
            epsilon,
            max_jump,
            gaussian_correction,
        )?;
        d.symmetric = true;
        Ok(d)
    }

    pub fn value(&self, y: f64) -> f64 {
        if y == 0.0 || y.abs() > self.max_jump {
            0.0
        } else {
            (self.density)(y)
        }
    }
}

/// Jump measure on `R \ {0}`.
#[derive(Debug, Clone, Default)]
pub struct JumpMeasure {
    pub atoms: Vec<Atom>,
    pub density: Option<JumpDensity>,
}

impl JumpMeasure {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: Vec<Atom>) -> Result<Self> {
        let m = JumpMeasure {
            atoms,
            density: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_density(mut self, density: JumpDensity) -> Self {
        self.density = Some(density);
        self
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.atoms {
            if a.location == 0.0 || !a.location.is_finite() {
                return Err(Error::param("atoms", format!("atom location {} must be nonzero and finite", a.location)));
            }
            if !(a.rate > 0.0 && a.rate.is_finite()) {
                return Err(Error::param("atoms", format!("atom rate {} must be positive", a.rate)));
            }
        }
        Ok(())
    }
}

/// Jump measure on `R^2 \ {0}`; atoms only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JumpMeasure2D {
    pub atoms: Vec<Atom2>,
}

impl JumpMeasure2D {
    pub fn from_atoms(atoms: Vec<Atom2>) -> Result<Self> {
        let m = JumpMeasure2D { atoms };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for a in &self.atoms {
            if a.norm() == 0.0 || !a.norm().is_finite() {
                return Err(Error::param("atoms", "2-D atom locations must be nonzero and finite"));
            }
            if !(a.rate > 0.0 && a.rate.is_finite()) {
                return Err(Error::param("atoms", format!("atom rate {} must be positive", a.rate)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LevyTriplet1D {
    pub beta: f64,
    pub alpha: f64,
    pub jumps: JumpMeasure,
    pub h: f64,
}

impl LevyTriplet1D {
    pub fn new(beta: f64, alpha: f64, jumps: JumpMeasure, h: f64) -> Result<Self> {
        let t = LevyTriplet1D { beta, alpha, jumps, h };
        t.validate()?;
        Ok(t)
    }

    pub fn drift(beta: f64) -> Self {
        LevyTriplet1D {
            beta,
            alpha: 0.0,
            jumps: JumpMeasure::empty(),
            h: DEFAULT_TRUNCATION,
        }
    }

    pub fn gaussian(alpha: f64) -> Result<Self> {
        Self::new(0.0, alpha, JumpMeasure::empty(), DEFAULT_TRUNCATION)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(Error::param("beta", "must be finite"));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", format!("alpha = {} violates alpha >= 0", self.alpha)));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::param("h", format!("h = {} must be positive", self.h)));
        }
        self.jumps.validate()
    }

    /// Equivalent triplet for truncation radius `h_new`: the drift absorbs
    /// the change of compensator so that the exponent is unchanged.
    pub fn with_truncation(&self, h_new: f64) -> Result<Self> {
        if !(h_new > 0.0 && h_new.is_finite()) {
            return Err(Error::param("h", "must be positive"));
        }
        let mut shift: f64 = self
            .jumps
            .atoms
            .iter()
            .map(|a| a.rate * a.location * (indicator(a.location, h_new) - indicator(a.location, self.h)))
            .sum();
        if let Some(d) = &self.jumps.density {
            let (lo, hi) = (self.h.min(h_new), self.h.max(h_new));
            if lo < d.max_jump {
                let hi = hi.min(d.max_jump);
                let first_moment = integrate_both_sides(|y| y * d.value(y), lo, hi)?;
                shift += if h_new > self.h { first_moment } else { -first_moment };
            }
        }
        Ok(LevyTriplet1D {
            beta: self.beta + shift,
            alpha: self.alpha,
            jumps: self.jumps.clone(),
            h: h_new,
        })
    }

    /// `beta == 0` and a reflection-symmetric jump measure.
    pub fn is_symmetric(&self) -> bool {
        if self.beta != 0.0 {
            return false;
        }
        if let Some(d) = &self.jumps.density {
            if !d.symmetric {
                return false;
            }
        }
        let mut pos: Vec<(f64, f64)> = self
            .jumps
            .atoms
            .iter()
            .filter(|a| a.location > 0.0)
            .map(|a| (a.location, a.rate))
            .collect();
        let mut neg: Vec<(f64, f64)> = self
            .jumps
            .atoms
            .iter()
            .filter(|a| a.location < 0.0)
            .map(|a| (-a.location, a.rate))
            .collect();
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pos == neg
    }
}

/// Two-dimensional triplet driving `(xi, eta)`; see [`char_exponent_2d`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyTriplet2D {
    pub beta_p: f64,
    pub beta_q: f64,
    pub alpha_pp: f64,
    pub alpha_pq: f64,
    pub alpha_qq: f64,
    pub jumps: JumpMeasure2D,
    pub h: f64,
}

impl LevyTriplet2D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        beta_p: f64,
        beta_q: f64,
        alpha_pp: f64,
        alpha_pq: f64,
        alpha_qq: f64,
        jumps: JumpMeasure2D,
        h: f64,
    ) -> Result<Self> {
        let t = LevyTriplet2D {
            beta_p,
            beta_q,
            alpha_pp,
            alpha_pq,
            alpha_qq,
            jumps,
            h,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn zero() -> Self {
        LevyTriplet2D {
            beta_p: 0.0,
            beta_q: 0.0,
            alpha_pp: 0.0,
            alpha_pq: 0.0,
            alpha_qq: 0.0,
            jumps: JumpMeasure2D::default(),
            h: DEFAULT_TRUNCATION,
        }
    }

    /// Eigenvalues of the diffusion matrix, ascending.
    pub fn alpha_eigenvalues(&self) -> [f64; 2] {
        let mean = 0.5 * (self.alpha_pp + self.alpha_qq);
        let rad = (0.25 * (self.alpha_pp - self.alpha_qq).powi(2) + self.alpha_pq.powi(2)).sqrt();
        [mean - rad, mean + rad]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_p, self.beta_q, self.alpha_pp, self.alpha_pq, self.alpha_qq];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("triplet2", "coefficients must be finite"));
        }
        let [lo, _] = self.alpha_eigenvalues();
        if lo < -PSD_TOLERANCE {
            return Err(Error::param(
                "alpha",
                format!("diffusion matrix is not positive semidefinite (eigenvalue {lo:e})"),
            ));
        }
        if !(self.h > 0.0 && self.h.is_finite()) {
            return Err(Error::param("h", format!("h = {} must be positive", self.h)));
        }
        self.jumps.validate()
    }
}

fn indicator(y: f64, h: f64) -> f64 {
    if y.abs() <= h {
        1.0
    } else {
        0.0
    }
}

/// `e^{i theta} - 1 - i theta` without cancellation for small `theta`.
fn expm1_i_compensated(theta: f64) -> Complex64 {
    let re = -2.0 * (0.5 * theta).sin().powi(2);
    let im = if theta.abs() < 1e-2 {
        let t3 = theta * theta * theta;
        -t3 / 6.0 + t3 * theta * theta / 120.0 - t3 * theta.powi(4) / 5040.0
    } else {
        theta.sin() - theta
    };
    Complex64::new(re, im)
}

/// `e^{i theta} - 1` without cancellation.
fn expm1_i(theta: f64) -> Complex64 {
    Complex64::new(-2.0 * (0.5 * theta).sin().powi(2), theta.sin())
}

/// Characteristic exponent `eta(lambda)` with `M exp(i lambda xi_t) = exp(t eta)`.
pub fn char_exponent_1d(triplet: &LevyTriplet1D, lambda: f64) -> Result<Complex64> {
    let mut eta = Complex64::new(-0.5 * triplet.alpha * lambda * lambda, triplet.beta * lambda);
    for a in &triplet.jumps.atoms {
        let theta = a.location * lambda;
        eta += a.rate
            * if a.location.abs() <= triplet.h {
                expm1_i_compensated(theta)
            } else {
                expm1_i(theta)
            };
    }
    if let Some(d) = &triplet.jumps.density {
        eta += density_exponent(d, triplet.h, lambda)?;
    }
    Ok(eta)
}

fn density_exponent(d: &JumpDensity, h: f64, lambda: f64) -> Result<Complex64> {
    let small_top = h.min(d.max_jump);
    let small = integrate_from_zero_both_sides(|y| expm1_i_compensated(y * lambda) * d.value(y), small_top)
        .map_err(|e| relabel(e, "char_exponent_1d"))?;
    let big = if d.max_jump > h {
        integrate_both_sides(|y| expm1_i(y * lambda) * d.value(y), h, d.max_jump)?
    } else {
        Complex64::new(0.0, 0.0)
    };
    Ok(small + big)
}

fn relabel(e: Error, context: &'static str) -> Error {
    match e {
        Error::Numerical { detail, .. } => Error::Numerical { context, detail },
        other => other,
    }
}

/// Integral of `g(y) + g(-y)` over `(lo, hi]`.
fn integrate_both_sides<T, G>(g: G, lo: f64, hi: f64) -> Result<T>
where
    T: crate::quad::QuadValue,
    G: Fn(f64) -> T,
{
    if hi <= lo {
        return Ok(g(hi) * 0.0);
    }
    adaptive_simpson(|y| g(y) + g(-y), lo, hi, SimpsonConfig::default())
}

/// Integral of `g(y) + g(-y)` over `(0, top]`, summed over dyadic shells
/// `(top 2^{-k-1}, top 2^{-k}]`.
///
/// Shell contributions of a convergent integrand eventually decay
/// geometrically; a ratio that stays near one is reported as divergence.
fn integrate_from_zero_both_sides<T, G>(g: G, top: f64) -> Result<T>
where
    T: crate::quad::QuadValue,
    G: Fn(f64) -> T,
{
    let (total, _) = dyadic_shells(|y| g(y) + g(-y), top)?;
    Ok(total)
}

/// Sum of shell integrals of `g` over `(0, top]` plus a geometric tail
/// estimate; returns the total and the shell magnitudes.
pub(crate) fn dyadic_shells<T, G>(g: G, top: f64) -> Result<(T, Vec<f64>)>
where
    T: crate::quad::QuadValue,
    G: Fn(f64) -> T,
{
    const MAX_SHELLS: usize = 400;
    const RATIO_WINDOW: usize = 20;
    let cfg = SimpsonConfig {
        abs_tol: 1e-300,
        rel_tol: 1e-11,
        max_depth: 40,
    };
    let mut total = g(top) * 0.0;
    let mut mags = Vec::new();
    let mut hi = top;
    for _ in 0..MAX_SHELLS {
        let lo = 0.5 * hi;
        let shell: T = adaptive_simpson(&g, lo, hi, cfg)?;
        total = total + shell;
        mags.push(shell.magnitude());
        let scale = total.magnitude();
        let tail_small = mags.len() > 3 && mags[mags.len() - 3..].iter().all(|&m| m <= 1e-16 * scale.max(1e-300));
        if tail_small || hi < 1e-280 {
            return Ok((total, mags));
        }
        hi = lo;
    }
    // slowly decaying shells: extrapolate if the decay ratio is clearly below one
    let n = mags.len();
    let ratio = (mags[n - 1] / mags[n - 1 - RATIO_WINDOW]).powf(1.0 / RATIO_WINDOW as f64);
    if ratio.is_finite() && ratio < 0.99 {
        let tail = mags[n - 1] * ratio / (1.0 - ratio);
        if tail <= 1e-10 * total.magnitude() {
            return Ok((total, mags));
        }
    }
    Err(Error::numerical(
        "levy_measure_quadrature",
        format!(
            "integral near the origin does not converge: shell ratio {ratio:.4} after {n} dyadic shells (last shell {:.3e})",
            mags[n - 1]
        ),
    ))
}

/// Exponent of the two-dimensional process `(xi, eta)`:
///
/// ```text
/// M exp i(mu xi_t - lambda eta_t) = exp t{ i(mu beta_P - lambda beta_Q)
///     - 1/2 (a_PP mu^2 + 2 a_PQ mu lambda + a_QQ lambda^2)
///     + Int [e^{i(mu x - lambda v)} - 1 - i(mu x - lambda v) 1_h(x, v)] nu(dx dv) }
/// ```
pub fn char_exponent_2d(triplet: &LevyTriplet2D, mu: f64, lambda: f64) -> Result<Complex64> {
    let quad = triplet.alpha_pp * mu * mu + 2.0 * triplet.alpha_pq * mu * lambda + triplet.alpha_qq * lambda * lambda;
    let mut eta = Complex64::new(-0.5 * quad, mu * triplet.beta_p - lambda * triplet.beta_q);
    for a in &triplet.jumps.atoms {
        let theta = mu * a.location[0] - lambda * a.location[1];
        eta += a.rate
            * if a.norm() <= triplet.h {
                expm1_i_compensated(theta)
            } else {
                expm1_i(theta)
            };
    }
    Ok(eta)
}

/// Outcome of the Lévy integrability check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyConditionReport {
    /// `Int [|y|^2 1_h + (1 - 1_h)] d mu`, when finite.
    pub value: Option<f64>,
    pub passed: bool,
    pub diagnostic: String,
}

pub trait LevyMeasure {
    fn levy_condition(&self) -> LevyConditionReport;
}

impl LevyMeasure for LevyTriplet1D {
    fn levy_condition(&self) -> LevyConditionReport {
        let h = self.h;
        let atomic: f64 = self
            .jumps
            .atoms
            .iter()
            .map(|a| a.rate * if a.location.abs() <= h { a.location * a.location } else { 1.0 })
            .sum();
        let Some(d) = &self.jumps.density else {
            return LevyConditionReport {
                value: Some(atomic),
                passed: true,
                diagnostic: format!("{} atoms, finite sum", self.jumps.atoms.len()),
            };
        };
        let top = h.min(d.max_jump);
        let small = integrate_from_zero_both_sides(|y: f64| y * y * d.value(y), top);
        let big = if d.max_jump > h {
            integrate_both_sides(|y: f64| d.value(y), h, d.max_jump)
        } else {
            Ok(0.0)
        };
        match (small, big) {
            (Ok(s), Ok(b)) => LevyConditionReport {
                value: Some(atomic + s + b),
                passed: true,
                diagnostic: format!("density {} integrable; atoms {}", d.label, self.jumps.atoms.len()),
            },
            (Err(e), _) | (_, Err(e)) => LevyConditionReport {
                value: None,
                passed: false,
                diagnostic: e.to_string(),
            },
        }
    }
}

impl LevyMeasure for LevyTriplet2D {
    fn levy_condition(&self) -> LevyConditionReport {
        let value: f64 = self
            .jumps
            .atoms
            .iter()
            .map(|a| {
                let r = a.norm();
                a.rate * if r <= self.h { r * r } else { 1.0 }
            })
            .sum();
        LevyConditionReport {
            value: Some(value),
            passed: true,
            diagnostic: format!("{} atoms, finite sum", self.jumps.atoms.len()),
        }
    }
}

pub fn validate_levy_condition<T: LevyMeasure>(triplet: &T) -> LevyConditionReport {
    triplet.levy_condition()
}

/// A jump larger than `h` recorded during sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord<V> {
    pub time: f64,
    pub jump: V,
}

/// Sampled path on a time grid, starting at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample<V> {
    pub times: Vec<f64>,
    pub values: Vec<V>,
    pub jump_log: Vec<JumpRecord<V>>,
    pub seed: u64,
}

pub type PathSample1D = PathSample<f64>;
pub type PathSample2D = PathSample<[f64; 2]>;

impl PathSample1D {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

impl PathSample2D {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,xi,eta")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(out, "{t},{},{}", v[0], v[1])?;
        }
        Ok(())
    }
}

impl<V: Serialize> PathSample<V> {
    /// Sidecar JSON with the jump log and seed.
    pub fn jump_log_json(&self) -> String {
        serde_json::json!({ "seed": self.seed, "jumps": self.jump_log }).to_string()
    }
}

#[derive(Debug, Clone)]
struct DensityTable {
    /// Cell edges `(lo, hi)` of the signed jump range, |y| in (epsilon, max].
    cells: Vec<(f64, f64)>,
    cdf: Vec<f64>,
    intensity: f64,
    /// Added to the drift per unit time.
    drift: f64,
    /// Variance per unit time of the Gaussian standing in for removed jumps.
    small_variance: f64,
}

const DENSITY_CELLS: usize = 2048;

impl DensityTable {
    fn build(d: &JumpDensity, h: f64) -> Result<Self> {
        let eps = d.epsilon;
        let ratio = (d.max_jump / eps).powf(1.0 / DENSITY_CELLS as f64);
        let mut cells = Vec::with_capacity(2 * DENSITY_CELLS);
        let mut masses = Vec::with_capacity(2 * DENSITY_CELLS);
        let cfg = SimpsonConfig::default();
        let mut lo = eps;
        for i in 0..DENSITY_CELLS {
            let hi = if i + 1 == DENSITY_CELLS { d.max_jump } else { lo * ratio };
            let pos: f64 = adaptive_simpson(|y| d.value(y), lo, hi, cfg)?;
            let neg: f64 = adaptive_simpson(|y| d.value(-y), lo, hi, cfg)?;
            cells.push((lo, hi));
            masses.push(pos);
            cells.push((-hi, -lo));
            masses.push(neg);
            lo = hi;
        }
        let mut cdf = Vec::with_capacity(masses.len());
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            cdf.push(acc);
        }
        let intensity = acc;
        // compensator of sampled jumps in (epsilon, h]
        let comp_top = h.min(d.max_jump);
        let compensated = if comp_top > eps {
            integrate_both_sides(|y| y * d.value(y), eps, comp_top)?
        } else {
            0.0
        };
        // removed jumps in (h, epsilon] are uncompensated: keep their mean
        let removed_mean = if eps > h {
            integrate_both_sides(|y| y * d.value(y), h, eps.min(d.max_jump))?
        } else {
            0.0
        };
        let small_variance = if d.gaussian_correction {
            integrate_from_zero_both_sides(|y| y * y * d.value(y), eps.min(d.max_jump))?
        } else {
            0.0
        };
        Ok(DensityTable {
            cells,
            cdf,
            intensity,
            drift: removed_mean - compensated,
            small_variance,
        })
    }

    fn sample_jump(&self, rng: &mut PathRng) -> f64 {
        let u: f64 = rng.random::<f64>() * self.intensity;
        let idx = self.cdf.partition_point(|&c| c < u).min(self.cells.len() - 1);
        let (lo, hi) = self.cells[idx];
        lo + (hi - lo) * rng.random::<f64>()
    }
}

fn poisson_count(rng: &mut PathRng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

/// Exact per-step sampler for a one-dimensional triplet.
#[derive(Debug, Clone)]
pub struct LevySampler1D {
    beta: f64,
    alpha: f64,
    h: f64,
    atoms: Vec<Atom>,
    small_atom_drift: f64,
    density: Option<DensityTable>,
}

impl LevySampler1D {
    pub fn new(triplet: &LevyTriplet1D) -> Result<Self> {
        triplet.validate()?;
        let small_atom_drift = triplet
            .jumps
            .atoms
            .iter()
            .filter(|a| a.location.abs() <= triplet.h)
            .map(|a| a.rate * a.location)
            .sum();
        let density = match &triplet.jumps.density {
            Some(d) => Some(DensityTable::build(d, triplet.h)?),
            None => None,
        };
        Ok(LevySampler1D {
            beta: triplet.beta,
            alpha: triplet.alpha,
            h: triplet.h,
            atoms: triplet.jumps.atoms.clone(),
            small_atom_drift,
            density,
        })
    }

    /// Increment over a step of length `dt`; jumps beyond `h` are appended to
    /// `log` (if given) with times uniform in `[t0, t0 + dt)`.
    pub fn increment(&self, dt: f64, t0: f64, rng: &mut PathRng, mut log: Option<&mut Vec<JumpRecord<f64>>>) -> f64 {
        let mut x = (self.beta - self.small_atom_drift) * dt;
        if self.alpha > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            x += (self.alpha * dt).sqrt() * z;
        }
        for a in &self.atoms {
            let n = poisson_count(rng, a.rate * dt);
            x += n as f64 * a.location;
            if a.location.abs() > self.h {
                if let Some(log) = log.as_deref_mut() {
                    for _ in 0..n {
                        log.push(JumpRecord {
                            time: t0 + dt * rng.random::<f64>(),
                            jump: a.location,
                        });
                    }
                }
            }
        }
        if let Some(table) = &self.density {
            x += table.drift * dt;
            if table.small_variance > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                x += (table.small_variance * dt).sqrt() * z;
            }
            let n = poisson_count(rng, table.intensity * dt);
            for _ in 0..n {
                let y = table.sample_jump(rng);
                x += y;
                if y.abs() > self.h {
                    if let Some(log) = log.as_deref_mut() {
                        log.push(JumpRecord {
                            time: t0 + dt * rng.random::<f64>(),
                            jump: y,
                        });
                    }
                }
            }
        }
        x
    }
}

/// Exact per-step sampler for `(xi, eta)`, matching [`char_exponent_2d`].
#[derive(Debug, Clone)]
pub struct LevySampler2D {
    drift: [f64; 2],
    /// Lower Cholesky factor of the covariance of `(xi, eta)`.
    chol: [[f64; 2]; 2],
    h: f64,
    atoms: Vec<Atom2>,
}

impl LevySampler2D {
    pub fn new(triplet: &LevyTriplet2D) -> Result<Self> {
        triplet.validate()?;
        let comp = triplet
            .jumps
            .atoms
            .iter()
            .filter(|a| a.norm() <= triplet.h)
            .fold([0.0, 0.0], |acc, a| {
                [acc[0] + a.rate * a.location[0], acc[1] + a.rate * a.location[1]]
            });
        // the exponent pairs (mu, -lambda) with (xi, eta), so Cov(xi, eta) = -alpha_PQ
        let s11 = triplet.alpha_pp.max(0.0);
        let s21 = -triplet.alpha_pq;
        let s22 = triplet.alpha_qq.max(0.0);
        let l11 = s11.sqrt();
        let l21 = if l11 > 0.0 { s21 / l11 } else { 0.0 };
        let l22 = (s22 - l21 * l21).max(0.0).sqrt();
        Ok(LevySampler2D {
            drift: [triplet.beta_p - comp[0], triplet.beta_q - comp[1]],
            chol: [[l11, 0.0], [l21, l22]],
            h: triplet.h,
            atoms: triplet.jumps.atoms.clone(),
        })
    }

    pub fn increment(
        &self,
        dt: f64,
        t0: f64,
        rng: &mut PathRng,
        mut log: Option<&mut Vec<JumpRecord<[f64; 2]>>>,
    ) -> [f64; 2] {
        let mut x = [self.drift[0] * dt, self.drift[1] * dt];
        if self.chol[0][0] > 0.0 || self.chol[1][1] > 0.0 || self.chol[1][0] != 0.0 {
            let z0: f64 = StandardNormal.sample(rng);
            let z1: f64 = StandardNormal.sample(rng);
            let s = dt.sqrt();
            x[0] += s * self.chol[0][0] * z0;
            x[1] += s * (self.chol[1][0] * z0 + self.chol[1][1] * z1);
        }
        for a in &self.atoms {
            let n = poisson_count(rng, a.rate * dt);
            x[0] += n as f64 * a.location[0];
            x[1] += n as f64 * a.location[1];
            if a.norm() > self.h {
                if let Some(log) = log.as_deref_mut() {
                    for _ in 0..n {
                        log.push(JumpRecord {
                            time: t0 + dt * rng.random::<f64>(),
                            jump: a.location,
                        });
                    }
                }
            }
        }
        x
    }
}

fn validate_grid(time_grid: &[f64]) -> Result<()> {
    if time_grid.is_empty() {
        return Err(Error::Empty("time grid"));
    }
    if time_grid[0] != 0.0 {
        return Err(Error::param("time_grid", "must start at 0"));
    }
    for w in time_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::param("time_grid", format!("nonpositive step between {} and {}", w[0], w[1])));
        }
    }
    Ok(())
}

fn sort_log<V>(log: &mut [JumpRecord<V>]) {
    log.sort_by(|a, b| a.time.total_cmp(&b.time));
}

/// Samples a path of the process on `time_grid` from stream 0 of `seed`.
pub fn sample_increments(triplet: &LevyTriplet1D, time_grid: &[f64], seed: u64) -> Result<PathSample1D> {
    validate_grid(time_grid)?;
    let sampler = LevySampler1D::new(triplet)?;
    let mut rng = stream_rng(seed, 0);
    let mut values = Vec::with_capacity(time_grid.len());
    let mut log = Vec::new();
    let mut x = 0.0;
    values.push(x);
    for w in time_grid.windows(2) {
        x += sampler.increment(w[1] - w[0], w[0], &mut rng, Some(&mut log));
        values.push(x);
    }
    sort_log(&mut log);
    Ok(PathSample {
        times: time_grid.to_vec(),
        values,
        jump_log: log,
        seed,
    })
}

pub fn sample_increments_2d(triplet: &LevyTriplet2D, time_grid: &[f64], seed: u64) -> Result<PathSample2D> {
    validate_grid(time_grid)?;
    let sampler = LevySampler2D::new(triplet)?;
    let mut rng = stream_rng(seed, 0);
    let mut values = Vec::with_capacity(time_grid.len());
    let mut log = Vec::new();
    let mut x = [0.0, 0.0];
    values.push(x);
    for w in time_grid.windows(2) {
        let d = sampler.increment(w[1] - w[0], w[0], &mut rng, Some(&mut log));
        x = [x[0] + d[0], x[1] + d[1]];
        values.push(x);
    }
    sort_log(&mut log);
    Ok(PathSample {
        times: time_grid.to_vec(),
        values,
        jump_log: log,
        seed,
    })
}

/// Independent draws of `xi_t`, one per path stream.
pub fn sample_terminal(triplet: &LevyTriplet1D, t: f64, mc: &McConfig) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let sampler = LevySampler1D::new(triplet)?;
    mc::collect_paths(mc, |_, rng| Ok(if t == 0.0 { 0.0 } else { sampler.increment(t, 0.0, rng, None) }))
}

pub fn sample_terminal_2d(triplet: &LevyTriplet2D, t: f64, mc: &McConfig) -> Result<Vec<[f64; 2]>> {
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let sampler = LevySampler2D::new(triplet)?;
    mc::collect_paths(mc, |_, rng| {
        Ok(if t == 0.0 {
            [0.0, 0.0]
        } else {
            sampler.increment(t, 0.0, rng, None)
        })
    })
}

/// Values of `x -> M f(x + xi_t)` on a set of points, with standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionTable {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Monte Carlo estimate of the classical semigroup `M f(x + xi_t)`.
pub fn convolve_classical<F>(f: F, triplet: &LevyTriplet1D, t: f64, points: &[f64], mc: &McConfig) -> Result<FunctionTable>
where
    F: Fn(f64) -> f64 + Sync,
{
    mc.validate()?;
    if !(t >= 0.0) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    if t == 0.0 {
        return Ok(FunctionTable {
            points: points.to_vec(),
            values: points.iter().map(|&x| f(x)).collect(),
            stderr: vec![0.0; points.len()],
        });
    }
    let sampler = LevySampler1D::new(triplet)?;
    let n = points.len();
    let accs = mc::map_reduce(
        mc,
        || vec![Accumulator::new(); n],
        |_, rng, accs| {
            let xi = sampler.increment(t, 0.0, rng, None);
            for (acc, &x) in accs.iter_mut().zip(points) {
                acc.push(f(x + xi));
            }
            Ok(())
        },
        |a, b| a.iter_mut().zip(&b).for_each(|(a, b)| a.merge(b)),
    )?;
    Ok(FunctionTable {
        points: points.to_vec(),
        values: accs.iter().map(Accumulator::mean).collect(),
        stderr: accs.iter().map(Accumulator::stderr).collect(),
    })
}

/// Monte Carlo estimate of `sum_k w_k M f(x_k + xi_t)`; the standard error is
/// computed from the weighted per-path values.
pub fn convolve_classical_weighted<F>(
    f: F,
    triplet: &LevyTriplet1D,
    t: f64,
    points: &[f64],
    weights: &[f64],
    mc: &McConfig,
) -> Result<Estimate>
where
    F: Fn(f64) -> f64 + Sync,
{
    if points.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: points.len(),
            got: weights.len(),
        });
    }
    let weighted = |xi: f64| points.iter().zip(weights).map(|(&x, &w)| w * f(x + xi)).sum::<f64>();
    if t == 0.0 {
        return Ok(Estimate::exact(weighted(0.0)));
    }
    let sampler = LevySampler1D::new(triplet)?;
    let acc = mc::map_reduce(
        mc,
        Accumulator::new,
        |_, rng, acc| {
            acc.push(weighted(sampler.increment(t, 0.0, rng, None)));
            Ok(())
        },
        |a, b| a.merge(&b),
    )?;
    Ok(acc.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn gaussian_exponent() {
        let t = LevyTriplet1D::gaussian(1.0).unwrap();
        assert!((char_exponent_1d(&t, 2.0).unwrap() - c(-2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn exponent_vanishes_at_origin() {
        let jumps = JumpMeasure::from_atoms(vec![
            Atom { location: 0.3, rate: 2.0 },
            Atom { location: -2.0, rate: 1.5 },
        ])
        .unwrap();
        let t = LevyTriplet1D::new(0.7, 0.4, jumps, 1.0).unwrap();
        assert_eq!(char_exponent_1d(&t, 0.0).unwrap(), c(0.0, 0.0));
    }

    #[test]
    fn poisson_exponent() {
        let h = 0.5;
        let jumps = JumpMeasure::from_atoms(vec![Atom { location: 2.0 * h, rate: 3.0 }]).unwrap();
        let t = LevyTriplet1D::new(0.0, 0.0, jumps, h).unwrap();
        for lambda in [-1.3, 0.4, 2.0, 7.5] {
            let expected = 3.0 * (Complex64::new(0.0, 2.0 * h * lambda).exp() - 1.0);
            assert!((char_exponent_1d(&t, lambda).unwrap() - expected).norm() < 1e-13);
        }
    }

    #[test]
    fn atom_on_the_sphere_is_compensated() {
        let jumps = JumpMeasure::from_atoms(vec![Atom { location: 1.0, rate: 1.0 }]).unwrap();
        let t = LevyTriplet1D::new(0.0, 0.0, jumps, 1.0).unwrap();
        let eta = char_exponent_1d(&t, 0.5).unwrap();
        let expected = Complex64::new(0.0, 0.5).exp() - 1.0 - Complex64::new(0.0, 0.5);
        assert!((eta - expected).norm() < 1e-14);
    }

    #[test]
    fn exponent_2d_examples() {
        let zero = LevyTriplet2D::zero();
        assert_eq!(char_exponent_2d(&zero, 0.0, 0.0).unwrap(), c(0.0, 0.0));
        let drift = LevyTriplet2D { beta_p: 1.0, ..LevyTriplet2D::zero() };
        assert!((char_exponent_2d(&drift, 2.0, 0.0).unwrap() - c(0.0, 2.0)).norm() < 1e-15);
        let atom = LevyTriplet2D {
            jumps: JumpMeasure2D::from_atoms(vec![Atom2 { location: [1.5, -0.8], rate: 0.7 }]).unwrap(),
            ..LevyTriplet2D::zero()
        };
        let (mu, lambda) = (0.9, -1.7);
        let expected = 0.7 * (Complex64::new(0.0, mu * 1.5 - lambda * -0.8).exp() - 1.0);
        assert!((char_exponent_2d(&atom, mu, lambda).unwrap() - expected).norm() < 1e-14);
    }

    #[test]
    fn levy_condition_atoms() {
        let jumps = JumpMeasure::from_atoms(vec![
            Atom { location: 0.5, rate: 2.0 },
            Atom { location: 3.0, rate: 1.0 },
        ])
        .unwrap();
        let t = LevyTriplet1D::new(0.0, 0.0, jumps, 1.0).unwrap();
        let r = validate_levy_condition(&t);
        assert!(r.passed);
        assert!((r.value.unwrap() - (2.0 * 0.25 + 1.0)).abs() < 1e-15);
        let empty = LevyTriplet1D::drift(1.0);
        assert_eq!(validate_levy_condition(&empty).value, Some(0.0));
    }

    #[test]
    fn levy_condition_rejects_cubic_singularity() {
        let d = JumpDensity::new("|y|^-3", |y: f64| y.abs().powi(-3), 0.01, 2.0, false).unwrap();
        let t = LevyTriplet1D::new(0.0, 0.0, JumpMeasure::empty().with_density(d), 1.0).unwrap();
        let r = validate_levy_condition(&t);
        assert!(!r.passed, "{r:?}");
        assert!(r.value.is_none());
        // the exponent also reports the failure instead of returning NaN
        assert!(char_exponent_1d(&t, 1.0).is_err());
    }

    #[test]
    fn levy_condition_accepts_power_law_below_two() {
        let d = JumpDensity::power_law(1.0, 1.5, 0.01, 2.0, true).unwrap();
        let t = LevyTriplet1D::new(0.0, 0.0, JumpMeasure::empty().with_density(d), 1.0).unwrap();
        let r = validate_levy_condition(&t);
        assert!(r.passed, "{r:?}");
        // 2 * (Int_0^1 y^{-0.5} dy + Int_1^2 y^{-2.5} dy)
        let expected = 2.0 * (2.0 + (1.0 - 2f64.powf(-1.5)) / 1.5);
        assert!((r.value.unwrap() - expected).abs() < 1e-8, "{:?}", r.value);
    }

    #[test]
    fn invalid_triplets_rejected() {
        assert!(LevyTriplet1D::new(0.0, -1.0, JumpMeasure::empty(), 1.0).is_err());
        assert!(LevyTriplet1D::new(0.0, 1.0, JumpMeasure::empty(), 0.0).is_err());
        assert!(JumpMeasure::from_atoms(vec![Atom { location: 0.0, rate: 1.0 }]).is_err());
        assert!(JumpMeasure::from_atoms(vec![Atom { location: 1.0, rate: 0.0 }]).is_err());
        assert!(LevyTriplet2D::new(0.0, 0.0, 1.0, 2.0, 1.0, JumpMeasure2D::default(), 1.0).is_err());
    }

    #[test]
    fn truncation_change_preserves_exponent() {
        let jumps = JumpMeasure::from_atoms(vec![
            Atom { location: 0.4, rate: 2.0 },
            Atom { location: -1.5, rate: 0.5 },
            Atom { location: 2.5, rate: 1.0 },
        ])
        .unwrap();
        let t = LevyTriplet1D::new(0.3, 0.2, jumps, 1.0).unwrap();
        for h in [0.1, 2.0, 5.0] {
            let t2 = t.with_truncation(h).unwrap();
            for lambda in [-2.0, 0.5, 3.0] {
                let a = char_exponent_1d(&t, lambda).unwrap();
                let b = char_exponent_1d(&t2, lambda).unwrap();
                assert!((a - b).norm() < 1e-13, "h={h} lambda={lambda}");
            }
        }
    }

    #[test]
    fn drift_only_path_is_deterministic() {
        let t = LevyTriplet1D::drift(1.0);
        let p = sample_increments(&t, &[0.0, 0.5, 2.0], 3).unwrap();
        assert_eq!(p.values, vec![0.0, 0.5, 2.0]);
        assert!(p.jump_log.is_empty());
    }

    #[test]
    fn path_invariants_and_determinism() {
        let jumps = JumpMeasure::from_atoms(vec![
            Atom { location: 0.2, rate: 5.0 },
            Atom { location: -2.0, rate: 2.0 },
        ])
        .unwrap();
        let t = LevyTriplet1D::new(0.1, 0.5, jumps, 1.0).unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.1).collect();
        let a = sample_increments(&t, &grid, 42).unwrap();
        let b = sample_increments(&t, &grid, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.values[0], 0.0);
        assert!(a.jump_log.iter().all(|j| j.jump.abs() > t.h));
        assert!(a.jump_log.windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn bad_time_grids() {
        let t = LevyTriplet1D::drift(1.0);
        assert!(sample_increments(&t, &[], 1).is_err());
        assert!(sample_increments(&t, &[0.0, 1.0, 1.0], 1).is_err());
        assert!(sample_increments(&t, &[0.5, 1.0], 1).is_err());
    }

    #[test]
    fn convolution_trivial_cases() {
        let t = LevyTriplet1D::gaussian(1.0).unwrap();
        let pts = [-1.0, 0.0, 2.0];
        let mc = McConfig::new(1000, 9).unwrap();
        let same = convolve_classical(|x: f64| x.sin(), &t, 0.0, &pts, &mc).unwrap();
        assert_eq!(same.values, pts.iter().map(|x| x.sin()).collect::<Vec<_>>());
        let ones = convolve_classical(|_| 1.0, &t, 1.3, &pts, &mc).unwrap();
        assert!(ones.values.iter().all(|&v| v == 1.0));
        assert!(ones.stderr.iter().all(|&s| s == 0.0));
        assert!(convolve_classical(|_| 1.0, &t, 1.0, &pts, &McConfig { n_paths: 0, seed: 1 }).is_err());
    }

    #[test]
    fn symmetry_detection() {
        let sym = JumpMeasure::from_atoms(vec![
            Atom { location: 1.0, rate: 2.0 },
            Atom { location: -1.0, rate: 2.0 },
        ])
        .unwrap();
        assert!(LevyTriplet1D::new(0.0, 1.0, sym.clone(), 1.0).unwrap().is_symmetric());
        assert!(!LevyTriplet1D::new(0.1, 1.0, sym, 1.0).unwrap().is_symmetric());
        let asym = JumpMeasure::from_atoms(vec![Atom { location: 1.0, rate: 2.0 }]).unwrap();
        assert!(!LevyTriplet1D::new(0.0, 1.0, asym, 1.0).unwrap().is_symmetric());
    }
}

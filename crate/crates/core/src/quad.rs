//! One-dimensional quadrature: adaptive Simpson and Gauss–Legendre rules.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::{Error, Result};

/// Values that adaptive quadrature can integrate.
pub trait QuadValue: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn magnitude(&self) -> f64;
    fn is_finite_value(&self) -> bool;
}

impl QuadValue for f64 {
    fn magnitude(&self) -> f64 {
        self.abs()
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl QuadValue for Complex64 {
    fn magnitude(&self) -> f64 {
        self.norm()
    }
    fn is_finite_value(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

/// Tolerances for [`adaptive_simpson`].
#[derive(Debug, Clone, Copy)]
pub struct SimpsonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for SimpsonConfig {
    fn default() -> Self {
        SimpsonConfig {
            abs_tol: 1e-13,
            rel_tol: 1e-10,
            max_depth: 48,
        }
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
///
/// The interval is first split into 8 panels so that features narrower
/// than the whole interval are not missed by the initial 5-point probe.
pub fn adaptive_simpson<T, F>(f: F, a: f64, b: f64, cfg: SimpsonConfig) -> Result<T>
where
    T: QuadValue,
    F: Fn(f64) -> T,
{
    if a == b {
        return Ok(f(a) * 0.0);
    }
    const PANELS: usize = 8;
    let h = (b - a) / PANELS as f64;
    // coarse estimate for the relative target
    let mut coarse = f(a) * 0.0;
    let mut probes = Vec::with_capacity(PANELS);
    for i in 0..PANELS {
        let lo = a + h * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + h };
        let (flo, fmid, fhi) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(lo, hi, flo, fmid, fhi);
        coarse = coarse + whole;
        probes.push((lo, hi, flo, fmid, fhi, whole));
    }
    let scale = coarse.magnitude();
    let tol = (cfg.rel_tol * scale).max(cfg.abs_tol) / PANELS as f64;
    let mut total = f(a) * 0.0;
    for (lo, hi, flo, fmid, fhi, whole) in probes {
        total = total + recurse(&f, lo, hi, flo, fmid, fhi, whole, tol, cfg.max_depth)?;
    }
    if !total.is_finite_value() {
        return Err(Error::numerical("adaptive_simpson", "non-finite integral"));
    }
    Ok(total)
}

fn simpson<T: QuadValue>(a: f64, b: f64, fa: T, fm: T, fb: T) -> T {
    (fa + fm * 4.0 + fb) * ((b - a) / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn recurse<T: QuadValue, F: Fn(f64) -> T>(
    f: &F,
    a: f64,
    b: f64,
    fa: T,
    fm: T,
    fb: T,
    whole: T,
    tol: f64,
    depth: u32,
) -> Result<T> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if !delta.is_finite_value() {
        return Err(Error::numerical(
            "adaptive_simpson",
            format!("non-finite integrand near x = {m:e}"),
        ));
    }
    if delta.magnitude() <= 15.0 * tol || (b - a).abs() < 1e-15 * m.abs().max(1.0) {
        return Ok(left + right + delta * (1.0 / 15.0));
    }
    if depth == 0 {
        return Err(Error::numerical(
            "adaptive_simpson",
            format!(
                "no convergence on [{a:e}, {b:e}] (residual {:.3e})",
                delta.magnitude()
            ),
        ));
    }
    Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule with `panels` equal panels over `[a, b]`.
pub fn composite_gauss<T: QuadValue, F: Fn(f64) -> T>(
    f: F,
    a: f64,
    b: f64,
    order: usize,
    panels: usize,
) -> T {
    let (nodes, weights) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut total = f(a) * 0.0;
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (x, w) in nodes.iter().zip(&weights) {
            total = total + f(lo + 0.5 * h * (x + 1.0)) * (0.5 * h * w);
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(16);
        // degree 30 polynomial x^30 integrates to 2/31
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((s - 2.0 / 31.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_handles_smooth_and_complex() {
        let v: f64 = adaptive_simpson(|x: f64| x.exp(), 0.0, 1.0, SimpsonConfig::default()).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
        let z: Complex64 = adaptive_simpson(
            |x: f64| Complex64::from_polar(1.0, x),
            0.0,
            std::f64::consts::PI,
            SimpsonConfig::default(),
        )
        .unwrap();
        assert!((z - Complex64::new(0.0, 2.0)).norm() < 1e-10);
    }

    #[test]
    fn simpson_reports_non_finite() {
        let r: Result<f64> = adaptive_simpson(|x: f64| 1.0 / x, 0.0, 1.0, SimpsonConfig::default());
        assert!(r.is_err());
    }
}

//! Periodic position lattice carrying `L^2(R)` wave functions.
//!
//! Positions are `x_k = x_min + k dx`; momenta are the FFT frequencies
//! `p_j = 2 pi j / (n dx)` folded into `[-pi/dx, pi/dx)`. With `P = -i d/dx`:
//!
//! * `V_y = exp(iyQ)` multiplies by `e^{i y x_k}`;
//! * `U_x = exp(-ixP)` multiplies the momentum amplitudes by `e^{-i x p_j}`,
//!   so `(U_x psi)(q) = psi(q - x)`;
//! * `U_x V_y = e^{-ixy} V_y U_x` (exact for `x` a multiple of `dx` and `y`
//!   a multiple of the momentum spacing);
//! * `W_{x,v} = exp i(vQ - xP) = e^{-ivx/2} V_v U_x`, the unique phase for
//!   which `W* Q W = Q + x` and `W* P W = P + v` hold alongside the
//!   commutation relation above.

use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Boundary-mass tolerance used by the checked operations.
pub const SUPPORT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_points: usize,
    pub x_min: f64,
    pub dx: f64,
}

impl GridSpec {
    pub fn new(n_points: usize, x_min: f64, dx: f64) -> Result<Self> {
        let g = GridSpec { n_points, x_min, dx };
        g.validate()?;
        Ok(g)
    }

    /// `n` points covering `[-half_width, half_width)`.
    pub fn centered(n_points: usize, half_width: f64) -> Result<Self> {
        Self::new(n_points, -half_width, 2.0 * half_width / n_points as f64)
    }

    /// 1024 points on `[-40, 40)`.
    pub fn default_test() -> Self {
        GridSpec {
            n_points: 1024,
            x_min: -40.0,
            dx: 80.0 / 1024.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 || !self.n_points.is_power_of_two() {
            return Err(Error::param("n_points", format!("{} is not a power of two >= 2", self.n_points)));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::param("dx", "must be positive"));
        }
        if !self.x_min.is_finite() {
            return Err(Error::param("x_min", "must be finite"));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.n_points as f64 * self.dx
    }

    pub fn dp(&self) -> f64 {
        2.0 * PI / self.length()
    }

    pub fn position(&self, k: usize) -> f64 {
        self.x_min + k as f64 * self.dx
    }

    pub fn momentum(&self, j: usize) -> f64 {
        let n = self.n_points;
        let jj = if j < n / 2 { j as i64 } else { j as i64 - n as i64 };
        jj as f64 * self.dp()
    }
}

/// Problems detected by the checked operations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridWarning {
    /// Probability in the outer sixteenth of the grid on either side.
    SupportOverflow { mass: f64 },
    /// Probability in the top eighth of the momentum band.
    BandLimit { mass: f64 },
    /// The state was rescaled from this norm.
    Unnormalized { norm: f64 },
    /// Displacements are not lattice-commensurate.
    Incommensurate,
}

impl fmt::Display for GridWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridWarning::SupportOverflow { mass } => write!(f, "boundary mass {mass:.3e}"),
            GridWarning::BandLimit { mass } => write!(f, "band-edge mass {mass:.3e}"),
            GridWarning::Unnormalized { norm } => write!(f, "state rescaled from norm {norm:.6}"),
            GridWarning::Incommensurate => write!(f, "incommensurate displacement"),
        }
    }
}

/// Result of an operation together with any warnings it raised.
#[derive(Debug, Clone)]
pub struct Checked<T> {
    pub value: T,
    pub warnings: Vec<GridWarning>,
}

impl<T> Checked<T> {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Grid plus precomputed coordinates and FFT plans; immutable and shareable.
pub struct Lattice {
    spec: GridSpec,
    x: Vec<f64>,
    p: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Lattice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lattice").field("spec", &self.spec).finish()
    }
}

impl Lattice {
    pub fn new(spec: GridSpec) -> Result<Arc<Self>> {
        spec.validate()?;
        let n = spec.n_points;
        let mut planner = FftPlanner::new();
        Ok(Arc::new(Lattice {
            spec,
            x: (0..n).map(|k| spec.position(k)).collect(),
            p: (0..n).map(|j| spec.momentum(j)).collect(),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }))
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn positions(&self) -> &[f64] {
        &self.x
    }

    /// Momenta in FFT order.
    pub fn momenta(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.spec.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_momentum(&self, amps: &mut [Complex64]) {
        self.fwd.process(amps);
    }

    pub fn to_position(&self, amps: &mut [Complex64]) {
        self.inv.process(amps);
        let scale = 1.0 / self.spec.n_points as f64;
        amps.iter_mut().for_each(|a| *a *= scale);
    }

    /// Multiplies by `e^{i y x_k}` in place.
    pub fn position_phase_in_place(&self, amps: &mut [Complex64], y: f64) {
        if y == 0.0 {
            return;
        }
        for (a, &x) in amps.iter_mut().zip(&self.x) {
            *a *= Complex64::from_polar(1.0, y * x);
        }
    }

    /// Multiplies momentum amplitudes by `e^{-i (x p + t p^2 / 2)}`: a shift
    /// by `x` composed with free evolution for time `t` (they commute).
    pub fn momentum_phase_in_place(&self, amps: &mut [Complex64], x: f64, t: f64) {
        if x == 0.0 && t == 0.0 {
            return;
        }
        self.to_momentum(amps);
        for (a, &p) in amps.iter_mut().zip(&self.p) {
            *a *= Complex64::from_polar(1.0, -(x * p + 0.5 * t * p * p));
        }
        self.to_position(amps);
    }

    /// Applies `W_{x,v}` in place.
    pub fn weyl_in_place(&self, amps: &mut [Complex64], x: f64, v: f64) {
        self.momentum_phase_in_place(amps, x, 0.0);
        self.position_phase_in_place(amps, v);
        if x != 0.0 && v != 0.0 {
            let phase = Complex64::from_polar(1.0, -0.5 * v * x);
            amps.iter_mut().for_each(|a| *a *= phase);
        }
    }

    /// Probability in the outer sixteenth of the grid on each side.
    pub fn boundary_mass(&self, amps: &[Complex64]) -> f64 {
        let n = amps.len();
        let edge = (n / 16).max(1);
        let total: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let outer: f64 = amps[..edge].iter().chain(&amps[n - edge..]).map(|a| a.norm_sqr()).sum();
        outer / total
    }

    /// Probability in the top eighth of the momentum band.
    pub fn band_edge_mass(&self, amps: &[Complex64]) -> f64 {
        let mut k = amps.to_vec();
        self.to_momentum(&mut k);
        let total: f64 = k.iter().map(|a| a.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let cutoff = 0.75 * PI / self.spec.dx;
        let edge: f64 = k
            .iter()
            .zip(&self.p)
            .filter(|(_, p)| p.abs() > cutoff)
            .map(|(a, _)| a.norm_sqr())
            .sum();
        edge / total
    }
}

/// Phase-space label of `W_{x,v} = exp i(vQ - xP)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylLabel {
    /// Space shift.
    pub x: f64,
    /// Momentum boost.
    pub v: f64,
}

impl WeylLabel {
    pub const IDENTITY: WeylLabel = WeylLabel { x: 0.0, v: 0.0 };

    pub fn new(x: f64, v: f64) -> Self {
        WeylLabel { x, v }
    }

    /// Central phase `c` in `W_{x,v} = e^{ic} V_v U_x`.
    pub fn central_phase(&self) -> f64 {
        -0.5 * self.v * self.x
    }

    pub fn inverse(&self) -> Self {
        WeylLabel { x: -self.x, v: -self.v }
    }
}

#[derive(Debug, Clone)]
pub struct WaveFunction {
    lattice: Arc<Lattice>,
    amps: Vec<Complex64>,
}

impl PartialEq for WaveFunction {
    fn eq(&self, other: &Self) -> bool {
        self.lattice.spec == other.lattice.spec && self.amps == other.amps
    }
}

impl WaveFunction {
    pub fn new(lattice: Arc<Lattice>, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != lattice.len() {
            return Err(Error::DimensionMismatch {
                expected: lattice.len(),
                got: amps.len(),
            });
        }
        if amps.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::param("amplitudes", "must be finite"));
        }
        Ok(WaveFunction { lattice, amps })
    }

    pub fn from_fn(lattice: Arc<Lattice>, f: impl Fn(f64) -> Complex64) -> Self {
        let amps = lattice.positions().iter().map(|&x| f(x)).collect();
        WaveFunction { lattice, amps }
    }

    /// Normalized Gaussian with position spread `sigma`, centred at `q0` and
    /// carrying mean momentum `p0`.
    pub fn gaussian(lattice: Arc<Lattice>, q0: f64, p0: f64, sigma: f64) -> Self {
        let norm = (2.0 * PI * sigma * sigma).powf(-0.25);
        let psi = WaveFunction::from_fn(lattice, |x| {
            let d = x - q0;
            Complex64::from_polar(norm * (-d * d / (4.0 * sigma * sigma)).exp(), p0 * x)
        });
        psi.normalized()
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn grid(&self) -> &GridSpec {
        &self.lattice.spec
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// `sum |psi_k|^2 dx`.
    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.lattice.spec.dx
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.amps.iter_mut().for_each(|a| *a /= n);
        }
        self
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &WaveFunction) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.lattice.spec.dx
    }

    /// `|<a|b>|^2 / (|a|^2 |b|^2)`.
    pub fn fidelity(&self, other: &WaveFunction) -> f64 {
        self.inner(other).norm_sqr() / (self.norm_sqr() * other.norm_sqr())
    }

    pub fn distance(&self, other: &WaveFunction) -> f64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
            * self.lattice.spec.dx.sqrt()
    }

    pub fn momentum_amplitudes(&self) -> Vec<Complex64> {
        let mut k = self.amps.clone();
        self.lattice.to_momentum(&mut k);
        k
    }

    pub fn mean_position(&self) -> f64 {
        let w: f64 = self.amps.iter().map(|a| a.norm_sqr()).sum();
        self.amps
            .iter()
            .zip(self.lattice.positions())
            .map(|(a, x)| a.norm_sqr() * x)
            .sum::<f64>()
            / w
    }

    pub fn mean_momentum(&self) -> f64 {
        let k = self.momentum_amplitudes();
        let w: f64 = k.iter().map(|a| a.norm_sqr()).sum();
        k.iter().zip(self.lattice.momenta()).map(|(a, p)| a.norm_sqr() * p).sum::<f64>() / w
    }

    pub fn boundary_mass(&self) -> f64 {
        self.lattice.boundary_mass(&self.amps)
    }

    pub fn band_edge_mass(&self) -> f64 {
        self.lattice.band_edge_mass(&self.amps)
    }

    pub fn support_warnings(&self, tolerance: f64) -> Vec<GridWarning> {
        let mut w = Vec::new();
        let mass = self.boundary_mass();
        if mass > tolerance {
            w.push(GridWarning::SupportOverflow { mass });
        }
        w
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,re,im")?;
        for (x, a) in self.lattice.positions().iter().zip(&self.amps) {
            writeln!(out, "{x},{},{}", a.re, a.im)?;
        }
        Ok(())
    }

    /// Reads the `x,re,im` format written by [`WaveFunction::write_csv`];
    /// the positions must match the lattice to 1e-9.
    pub fn read_csv<R: BufRead>(lattice: Arc<Lattice>, input: R) -> Result<Self> {
        let mut amps = Vec::with_capacity(lattice.len());
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::param("csv", e.to_string()))?;
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::param("csv", format!("line {}: {e}", i + 1)))?;
            if cols.len() != 3 {
                return Err(Error::param("csv", format!("line {}: expected 3 columns", i + 1)));
            }
            let k = amps.len();
            if k >= lattice.len() || (cols[0] - lattice.positions()[k]).abs() > 1e-9 {
                return Err(Error::param("csv", format!("line {}: position does not match the grid", i + 1)));
            }
            amps.push(Complex64::new(cols[1], cols[2]));
        }
        WaveFunction::new(lattice, amps)
    }
}

/// `V_y psi`; exact pointwise phase, norm preserved.
pub fn apply_position_phase(psi: &WaveFunction, y: f64) -> WaveFunction {
    let mut out = psi.clone();
    out.lattice.position_phase_in_place(&mut out.amps, y);
    out
}

/// `U_x psi` with a boundary-support check on the result.
pub fn apply_shift(psi: &WaveFunction, x: f64) -> Checked<WaveFunction> {
    let mut out = psi.clone();
    out.lattice.clone().momentum_phase_in_place(&mut out.amps, x, 0.0);
    let warnings = out.support_warnings(SUPPORT_TOLERANCE);
    Checked { value: out, warnings }
}

/// `W_{x,v} psi`.
pub fn apply_weyl(psi: &WaveFunction, label: WeylLabel) -> Checked<WaveFunction> {
    let mut out = psi.clone();
    out.lattice.clone().weyl_in_place(&mut out.amps, label.x, label.v);
    let warnings = out.support_warnings(SUPPORT_TOLERANCE);
    Checked { value: out, warnings }
}

/// `exp(-i t P^2/2) psi`, with a band-limit check on the input.
pub fn apply_free_evolution(psi: &WaveFunction, t: f64) -> Checked<WaveFunction> {
    let mut warnings = Vec::new();
    let band = psi.band_edge_mass();
    if band > SUPPORT_TOLERANCE {
        warnings.push(GridWarning::BandLimit { mass: band });
    }
    let mut out = psi.clone();
    out.lattice.clone().momentum_phase_in_place(&mut out.amps, 0.0, t);
    warnings.extend(out.support_warnings(SUPPORT_TOLERANCE));
    Checked { value: out, warnings }
}

/// Observables with a closed-form action on the lattice.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// `f(Q)`: values at the lattice positions.
    Position(Vec<f64>),
    /// `g(P)`: values at the lattice momenta, FFT order.
    Momentum(Vec<f64>),
    Weyl(WeylLabel),
}

impl Observable {
    pub fn position(lattice: &Lattice, f: impl Fn(f64) -> f64) -> Self {
        Observable::Position(lattice.positions().iter().map(|&x| f(x)).collect())
    }

    pub fn momentum(lattice: &Lattice, g: impl Fn(f64) -> f64) -> Self {
        Observable::Momentum(lattice.momenta().iter().map(|&p| g(p)).collect())
    }

    pub fn identity(lattice: &Lattice) -> Self {
        Observable::Position(vec![1.0; lattice.len()])
    }
}

/// `<psi|X|psi>` without normalization checks; `psi` must be normalized.
pub(crate) fn expectation_raw(psi: &WaveFunction, observable: &Observable) -> Complex64 {
    let dx = psi.lattice.spec.dx;
    match observable {
        Observable::Position(f) => {
            let s: f64 = psi.amps.iter().zip(f).map(|(a, v)| a.norm_sqr() * v).sum();
            Complex64::new(s * dx, 0.0)
        }
        Observable::Momentum(g) => {
            let k = psi.momentum_amplitudes();
            let n = psi.lattice.len() as f64;
            // Parseval: sum |psi_k|^2 = sum |khat_j|^2 / n
            let s: f64 = k.iter().zip(g).map(|(a, v)| a.norm_sqr() * v).sum();
            Complex64::new(s * dx / n, 0.0)
        }
        Observable::Weyl(label) => {
            let mut w = psi.clone();
            w.lattice.clone().weyl_in_place(&mut w.amps, label.x, label.v);
            psi.inner(&w)
        }
    }
}

/// `<psi|X|psi>`; an unnormalized state is rescaled and flagged.
pub fn expectation(psi: &WaveFunction, observable: &Observable) -> Result<Checked<Complex64>> {
    let expected_len = psi.lattice.len();
    match observable {
        Observable::Position(v) | Observable::Momentum(v) if v.len() != expected_len => {
            return Err(Error::DimensionMismatch {
                expected: expected_len,
                got: v.len(),
            })
        }
        _ => {}
    }
    let norm = psi.norm();
    if norm == 0.0 {
        return Err(Error::param("psi", "zero state"));
    }
    if (norm - 1.0).abs() > 1e-12 {
        let scaled = psi.clone().normalized();
        return Ok(Checked {
            value: expectation_raw(&scaled, observable),
            warnings: vec![GridWarning::Unnormalized { norm }],
        });
    }
    Ok(Checked {
        value: expectation_raw(psi, observable),
        warnings: Vec::new(),
    })
}

/// CCR defect with its commensurability flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CcrDefect {
    pub defect: f64,
    pub commensurate: bool,
}

fn is_multiple(a: f64, unit: f64) -> bool {
    let r = a / unit;
    (r - r.round()).abs() < 1e-9
}

/// `max_psi ||(U_x V_y - e^{-ixy} V_y U_x) psi||` over a battery of states:
/// Gaussians at several positions and momenta plus a rough random vector.
pub fn ccr_defect(grid: &GridSpec, x: f64, y: f64) -> Result<CcrDefect> {
    let lattice = Lattice::new(*grid)?;
    let commensurate = is_multiple(x, grid.dx) && is_multiple(y, grid.dp());
    let width = grid.length();
    let mut battery = vec![
        WaveFunction::gaussian(lattice.clone(), 0.0, 0.0, width / 40.0),
        WaveFunction::gaussian(lattice.clone(), -width / 8.0, 3.0 * grid.dp(), width / 60.0),
        WaveFunction::gaussian(lattice.clone(), width / 10.0, -5.5 * grid.dp(), width / 30.0),
    ];
    // deterministic pseudo-random amplitudes
    let mut state = 0x2545_F491_4F6C_DD1Du64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let rough: Vec<Complex64> = (0..grid.n_points).map(|_| Complex64::new(next(), next())).collect();
    battery.push(WaveFunction::new(lattice.clone(), rough)?.normalized());

    let central = Complex64::from_polar(1.0, -x * y);
    let mut worst: f64 = 0.0;
    for psi in &battery {
        let mut lhs = psi.amps.clone();
        lattice.position_phase_in_place(&mut lhs, y);
        lattice.momentum_phase_in_place(&mut lhs, x, 0.0);
        let mut rhs = psi.amps.clone();
        lattice.momentum_phase_in_place(&mut rhs, x, 0.0);
        lattice.position_phase_in_place(&mut rhs, y);
        let d: f64 = lhs
            .iter()
            .zip(&rhs)
            .map(|(l, r)| (l - central * r).norm_sqr())
            .sum::<f64>()
            * grid.dx;
        worst = worst.max(d.sqrt());
    }
    if x == 0.0 || y == 0.0 {
        worst = 0.0;
    }
    Ok(CcrDefect {
        defect: worst,
        commensurate,
    })
}

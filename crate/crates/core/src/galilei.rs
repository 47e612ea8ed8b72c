//! Galilean-covariant semigroups acting on Weyl operators.
//!
//! On `X = W_{x0,v0}` the dissipative part of the generator acts by a scalar
//! rate `psi(x0, v0)` and the free term transports the label along
//! `(x0 - v0 t, v0)`, so `Phi_t[W_{x0,v0}] = m(t) W_{x0 - v0 t, v0}` with
//! `m(t) = exp Int_0^t psi(x0 - v0 s, v0) ds`.
//!
//! The Langevin realization composes free steps with random Weyl kicks
//! `W_{dxi, deta}`; conjugation gives `W_{a,b}* W_{x,v} W_{a,b} =
//! e^{i(v a - x b)} W_{x,v}`, hence the kick noise must satisfy
//! `M exp i(v0 dxi - x0 deta) = exp(dt psi(x0, v0))`. That is
//! [`char_exponent_2d`] at `(mu, lambda) = (v0, x0)` for the triplet returned
//! by [`GalileanGenerator::driving_noise`].

use serde::{Deserialize, Serialize};
use num_complex::Complex64;

use crate::grid::{expectation_raw, Checked, GridWarning, Lattice, Observable, WaveFunction, WeylLabel, SUPPORT_TOLERANCE};
use crate::levy::{char_exponent_2d, validate_levy_condition, JumpRecord, LevySampler2D, LevyTriplet2D};
use crate::mc::{self, McConfig};
use crate::noise::{Verdict, MAX_OVERFLOW_FRACTION};
use crate::quad::{adaptive_simpson, SimpsonConfig};
use crate::stats::{Accumulator, ComplexAccumulator, ComplexEstimate};
use crate::{Error, Result};

/// Grid tolerance for deterministic comparisons of Weyl expectations.
pub const GRID_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalileanGenerator {
    /// Coefficients of the dissipative part: drift `(beta_P, beta_Q)`,
    /// double-commutator matrix `alpha`, jump measure on `(x, v)`.
    pub triplet: LevyTriplet2D,
    pub include_free_hamiltonian: bool,
}

impl GalileanGenerator {
    pub fn new(triplet: LevyTriplet2D, include_free_hamiltonian: bool) -> Result<Self> {
        triplet.validate()?;
        let levy = validate_levy_condition(&triplet);
        if !levy.passed {
            return Err(Error::param("triplet", levy.diagnostic));
        }
        Ok(GalileanGenerator {
            triplet,
            include_free_hamiltonian,
        })
    }

    pub fn free() -> Self {
        GalileanGenerator {
            triplet: LevyTriplet2D::zero(),
            include_free_hamiltonian: true,
        }
    }

    /// Law of the kick increments `(xi, eta)`.
    pub fn driving_noise(&self) -> LevyTriplet2D {
        LevyTriplet2D {
            beta_q: -self.triplet.beta_q,
            alpha_pq: 0.5 * self.triplet.alpha_pq,
            ..self.triplet.clone()
        }
    }

    /// Stable 64-bit FNV-1a hash of the JSON form, for report records.
    pub fn spec_hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// `m` and the transported label in `Phi_t[W] = m W_point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylSymbolState {
    pub multiplier: Complex64,
    pub point: WeylLabel,
}

/// `psi(x0, v0)` with `L_0[W_{x0,v0}] = psi W_{x0,v0}`:
///
/// ```text
/// i(beta_P v0 + beta_Q x0) - 1/2 (a_PP v0^2 + a_PQ v0 x0 + a_QQ x0^2)
///   + sum mu (e^{i(v0 x - x0 v)} - 1 - i(v0 x - x0 v) 1_h)
/// ```
pub fn weyl_symbol_rate(g: &GalileanGenerator, x0: f64, v0: f64) -> Complex64 {
    let t = &g.triplet;
    let quad = t.alpha_pp * v0 * v0 + t.alpha_pq * v0 * x0 + t.alpha_qq * x0 * x0;
    let mut rate = Complex64::new(-0.5 * quad, t.beta_p * v0 + t.beta_q * x0);
    for a in &t.jumps.atoms {
        let theta = v0 * a.location[0] - x0 * a.location[1];
        let comp = if a.norm() <= t.h { theta } else { 0.0 };
        rate += a.rate * Complex64::new(-2.0 * (0.5 * theta).sin().powi(2), theta.sin() - comp);
    }
    rate
}

pub fn evolve_weyl_closed_form(g: &GalileanGenerator, x0: f64, v0: f64, t: f64) -> Result<WeylSymbolState> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    let label = WeylLabel::new(x0, v0);
    if t == 0.0 {
        return Ok(WeylSymbolState {
            multiplier: Complex64::new(1.0, 0.0),
            point: label,
        });
    }
    if !g.include_free_hamiltonian || v0 == 0.0 {
        return Ok(WeylSymbolState {
            multiplier: (weyl_symbol_rate(g, x0, v0) * t).exp(),
            point: label,
        });
    }
    let cfg = SimpsonConfig {
        abs_tol: 1e-13,
        rel_tol: 1e-10,
        ..SimpsonConfig::default()
    };
    let integral: Complex64 = adaptive_simpson(|s| weyl_symbol_rate(g, x0 - v0 * s, v0), 0.0, t, cfg)?;
    Ok(WeylSymbolState {
        multiplier: integral.exp(),
        point: WeylLabel::new(x0 - v0 * t, v0),
    })
}

/// One time step: free flow for `dt/2`, the kick `W_{dxi, deta}`, free flow
/// for `dt/2`. The kick's global phase is irrelevant under conjugation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinStep {
    pub dt: f64,
    pub free: bool,
    pub kick: WeylLabel,
}

impl LangevinStep {
    pub fn apply(&self, psi: &WaveFunction) -> Checked<WaveFunction> {
        let lattice = psi.lattice().clone();
        let mut out = psi.clone();
        let half = if self.free { 0.5 * self.dt } else { 0.0 };
        let mut warnings = Vec::new();
        if self.free {
            let band = out.band_edge_mass();
            if band > SUPPORT_TOLERANCE {
                warnings.push(GridWarning::BandLimit { mass: band });
            }
        }
        lattice.momentum_phase_in_place(out.amplitudes_mut(), 0.0, half);
        lattice.weyl_in_place(out.amplitudes_mut(), self.kick.x, self.kick.v);
        lattice.momentum_phase_in_place(out.amplitudes_mut(), 0.0, half);
        warnings.extend(out.support_warnings(SUPPORT_TOLERANCE));
        Checked { value: out, warnings }
    }
}

pub fn sample_langevin_step(g: &GalileanGenerator, dt: f64, increments: [f64; 2]) -> Result<LangevinStep> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive"));
    }
    Ok(LangevinStep {
        dt,
        free: g.include_free_hamiltonian,
        kick: WeylLabel::new(increments[0], increments[1]),
    })
}

/// One Langevin trajectory `U_t psi`, with adjacent free half-steps merged.
struct Trajectory<'a> {
    lattice: &'a Lattice,
    sampler: &'a LevySampler2D,
    free: bool,
    t: f64,
    n_steps: usize,
}

impl Trajectory<'_> {
    fn run(&self, amps: &mut [Complex64], rng: &mut crate::rng::PathRng, log: Option<&mut Vec<JumpRecord<[f64; 2]>>>) {
        let dt = self.t / self.n_steps as f64;
        let tau = if self.free { dt } else { 0.0 };
        let mut log = log;
        self.lattice.momentum_phase_in_place(amps, 0.0, 0.5 * tau);
        for k in 0..self.n_steps {
            let [a, b] = self.sampler.increment(dt, k as f64 * dt, rng, log.as_deref_mut());
            // W_{a,b} = e^{iab/2} U_a V_b; U_a merges with the next free segment
            self.lattice.position_phase_in_place(amps, b);
            let next = if k + 1 == self.n_steps { 0.5 * tau } else { tau };
            self.lattice.momentum_phase_in_place(amps, a, next);
        }
    }
}

/// Langevin MC estimate at one step count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinRun {
    pub n_steps: usize,
    pub estimate: ComplexEstimate,
    /// `|m_n - m| |<W_point>|` with `m_n` the multiplier the step scheme
    /// realizes in expectation.
    pub discretization_band: f64,
    pub deviation: f64,
    pub within_band: bool,
    pub mean_jumps: f64,
    pub jumps_stderr: f64,
    pub overflow_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McVsClosedFormReport {
    pub generator_hash: String,
    pub label: WeylLabel,
    pub t: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub closed_form: Complex64,
    pub multiplier: Complex64,
    pub transported: WeylLabel,
    pub coarse: LangevinRun,
    pub fine: LangevinRun,
    /// `coarse.discretization_band / fine.discretization_band`; `None` when
    /// the scheme is exact for this label.
    pub band_ratio: Option<f64>,
    /// Expected number of jumps beyond `h` per path.
    pub expected_jumps: f64,
    pub verdict: Verdict,
}

/// `exp(dt sum_k psi(x0 - v0 (t - s_k), v0))` at step midpoints `s_k`: the
/// expectation multiplier realized by `n` Strang steps.
pub fn discrete_multiplier(g: &GalileanGenerator, x0: f64, v0: f64, t: f64, n_steps: usize) -> Complex64 {
    let dt = t / n_steps as f64;
    let speed = if g.include_free_hamiltonian { v0 } else { 0.0 };
    let sum: Complex64 = (0..n_steps)
        .map(|k| {
            let s = (k as f64 + 0.5) * dt;
            weyl_symbol_rate(g, x0 - speed * (t - s), v0)
        })
        .sum();
    (sum * dt).exp()
}

fn big_jump_rate(triplet: &LevyTriplet2D) -> f64 {
    triplet.jumps.atoms.iter().filter(|a| a.norm() > triplet.h).map(|a| a.rate).sum()
}

fn langevin_run(
    g: &GalileanGenerator,
    label: WeylLabel,
    psi: &WaveFunction,
    t: f64,
    n_steps: usize,
    mc: &McConfig,
) -> Result<(ComplexEstimate, Accumulator, usize)> {
    let sampler = LevySampler2D::new(&g.driving_noise())?;
    let lattice = psi.lattice().clone();
    let traj = Trajectory {
        lattice: &lattice,
        sampler: &sampler,
        free: g.include_free_hamiltonian,
        t,
        n_steps,
    };
    let obs = Observable::Weyl(label);
    #[derive(Default, Clone)]
    struct Acc {
        values: ComplexAccumulator,
        jumps: Accumulator,
        overflow: usize,
    }
    let acc = mc::map_reduce(
        mc,
        Acc::default,
        |_, rng, acc| {
            let mut state = psi.clone();
            let mut log = Vec::new();
            traj.run(state.amplitudes_mut(), rng, Some(&mut log));
            if lattice.boundary_mass(state.amplitudes()) > SUPPORT_TOLERANCE {
                acc.overflow += 1;
            }
            acc.values.push(expectation_raw(&state, &obs));
            acc.jumps.push(log.len() as f64);
            Ok(())
        },
        |a, b| {
            a.values.merge(&b.values);
            a.jumps.merge(&b.jumps);
            a.overflow += b.overflow;
        },
    )?;
    if acc.overflow as f64 > MAX_OVERFLOW_FRACTION * mc.n_paths as f64 {
        return Err(Error::TooManyOverflows {
            failed: acc.overflow,
            total: mc.n_paths,
        });
    }
    Ok((acc.values.estimate(), acc.jumps, acc.overflow))
}

/// Compares the Langevin MC estimate of `<psi|Phi_t[W_{x0,v0}]|psi>` at
/// `n_steps` and `2 n_steps` with the closed form.
///
/// Each run passes when `|MC - closed| <= 4 stderr + band + GRID_TOLERANCE`.
/// The verdict is inconclusive when `4 stderr` exceeds `|closed form|`.
pub fn mc_vs_closed_form(
    g: &GalileanGenerator,
    x0: f64,
    v0: f64,
    psi: &WaveFunction,
    t: f64,
    n_steps: usize,
    mc: &McConfig,
) -> Result<McVsClosedFormReport> {
    if n_steps == 0 {
        return Err(Error::param("n_steps", "must be positive"));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be positive"));
    }
    let closed = evolve_weyl_closed_form(g, x0, v0, t)?;
    let overlap = expectation_raw(psi, &Observable::Weyl(closed.point));
    let closed_value = closed.multiplier * overlap;
    let label = WeylLabel::new(x0, v0);
    let expected_jumps = big_jump_rate(&g.triplet) * t;
    let run = |n: usize| -> Result<LangevinRun> {
        let (estimate, jumps, overflow_paths) = langevin_run(g, label, psi, t, n, mc)?;
        let band = (discrete_multiplier(g, x0, v0, t, n) - closed.multiplier).norm() * overlap.norm();
        let deviation = (estimate.value - closed_value).norm();
        Ok(LangevinRun {
            n_steps: n,
            estimate,
            discretization_band: band,
            deviation,
            within_band: deviation <= 4.0 * estimate.stderr + band + GRID_TOLERANCE,
            mean_jumps: jumps.mean(),
            jumps_stderr: jumps.stderr(),
            overflow_paths,
        })
    };
    let coarse = run(n_steps)?;
    let fine = run(2 * n_steps)?;
    let band_ratio = (fine.discretization_band > 1e-14).then(|| coarse.discretization_band / fine.discretization_band);
    let verdict = if 4.0 * coarse.estimate.stderr.max(fine.estimate.stderr) > closed_value.norm() {
        Verdict::Inconclusive
    } else if coarse.within_band && fine.within_band {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(McVsClosedFormReport {
        generator_hash: g.spec_hash(),
        label,
        t,
        n_paths: mc.n_paths,
        seed: mc.seed,
        closed_form: closed_value,
        multiplier: closed.multiplier,
        transported: closed.point,
        coarse,
        fine,
        band_ratio,
        expected_jumps,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEntry {
    pub observable: WeylLabel,
    /// `<psi|Phi_t[W* X W]|psi>`.
    pub lhs: ComplexEstimate,
    /// `<W' psi|Phi_t[X]|W' psi>` with `W' = W_{x - v t, v}`.
    pub rhs: ComplexEstimate,
    /// Mean and standard error of the per-path difference.
    pub defect: f64,
    pub defect_stderr: f64,
    pub max_path_defect: f64,
    pub within_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub generator_hash: String,
    pub shift: WeylLabel,
    pub t: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub entries: Vec<CovarianceEntry>,
    pub verdict: Verdict,
}

/// Default observable battery for covariance scans.
pub fn weyl_battery() -> Vec<WeylLabel> {
    vec![
        WeylLabel::new(0.0, 0.0),
        WeylLabel::new(0.6, 0.0),
        WeylLabel::new(0.0, -0.8),
        WeylLabel::new(0.5, 0.7),
        WeylLabel::new(-1.1, 0.4),
    ]
}

/// Shared-seed check of `Phi_t[W* X W] = W'* Phi_t[X] W'`, `W = W_{x,v}`,
/// `W' = W_{x - v t, v}`, over Weyl observables `X`.
///
/// The identity holds path by path for the step scheme (the free flow
/// carries `W_{x - v t, v}` to `W_{x,v}` over total time `t`), so the band is
/// `4 stderr` of the per-path difference plus the grid tolerance.
#[allow(clippy::too_many_arguments)]
pub fn galilean_covariance_check(
    g: &GalileanGenerator,
    x: f64,
    v: f64,
    t: f64,
    psi: &WaveFunction,
    battery: &[WeylLabel],
    n_steps: usize,
    mc: &McConfig,
) -> Result<CovarianceReport> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::param("t", "must be nonnegative"));
    }
    if n_steps == 0 {
        return Err(Error::param("n_steps", "must be positive"));
    }
    let speed = if g.include_free_hamiltonian { v } else { 0.0 };
    let shift = WeylLabel::new(x, v);
    let sampler = LevySampler2D::new(&g.driving_noise())?;
    let lattice = psi.lattice().clone();
    let traj = Trajectory {
        lattice: &lattice,
        sampler: &sampler,
        free: g.include_free_hamiltonian,
        t,
        n_steps,
    };
    let mut moved = psi.clone();
    lattice.weyl_in_place(moved.amplitudes_mut(), x - speed * t, v);
    let nb = battery.len();
    #[derive(Clone)]
    struct Acc {
        lhs: Vec<ComplexAccumulator>,
        rhs: Vec<ComplexAccumulator>,
        diff: Vec<ComplexAccumulator>,
        max: Vec<f64>,
    }
    let acc = mc::map_reduce(
        mc,
        || Acc {
            lhs: vec![ComplexAccumulator::new(); nb],
            rhs: vec![ComplexAccumulator::new(); nb],
            diff: vec![ComplexAccumulator::new(); nb],
            max: vec![0.0; nb],
        },
        |_, rng, acc| {
            let mut rng_b = rng.clone();
            let mut a = psi.clone();
            let mut b = moved.clone();
            if t > 0.0 {
                traj.run(a.amplitudes_mut(), rng, None);
                traj.run(b.amplitudes_mut(), &mut rng_b, None);
            }
            // W U psi
            lattice.weyl_in_place(a.amplitudes_mut(), x, v);
            for (k, label) in battery.iter().enumerate() {
                let obs = Observable::Weyl(*label);
                let l = expectation_raw(&a, &obs);
                let r = expectation_raw(&b, &obs);
                acc.lhs[k].push(l);
                acc.rhs[k].push(r);
                acc.diff[k].push(l - r);
                acc.max[k] = acc.max[k].max((l - r).norm());
            }
            Ok(())
        },
        |a, b| {
            for k in 0..nb {
                a.lhs[k].merge(&b.lhs[k]);
                a.rhs[k].merge(&b.rhs[k]);
                a.diff[k].merge(&b.diff[k]);
                a.max[k] = a.max[k].max(b.max[k]);
            }
        },
    )?;
    let entries: Vec<CovarianceEntry> = (0..nb)
        .map(|k| {
            let d = acc.diff[k].estimate();
            let defect = d.value.norm();
            CovarianceEntry {
                observable: battery[k],
                lhs: acc.lhs[k].estimate(),
                rhs: acc.rhs[k].estimate(),
                defect,
                defect_stderr: d.stderr,
                max_path_defect: acc.max[k],
                within_band: defect <= 4.0 * d.stderr + GRID_TOLERANCE,
            }
        })
        .collect();
    let verdict = if entries.iter().all(|e| e.within_band) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(CovarianceReport {
        generator_hash: g.spec_hash(),
        shift,
        t,
        n_steps,
        n_paths: mc.n_paths,
        seed: mc.seed,
        entries,
        verdict,
    })
}

/// `char_exponent_2d` of the driving noise at the pairing `(v0, x0)`.
pub fn driving_exponent(g: &GalileanGenerator, x0: f64, v0: f64) -> Result<Complex64> {
    char_exponent_2d(&g.driving_noise(), v0, x0)
}

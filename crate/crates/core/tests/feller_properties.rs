use proptest::prelude::*;

use qnoise_core::feller::{
    feller_function, feller_test, simulate_killed_diffusion, DriftKind, DriftSpec, EndVerdict, KillOptions,
};
use qnoise_core::mc::McConfig;

fn run(kind: DriftKind, t: f64, dt: f64, opts: KillOptions, n: usize, seed: u64) -> qnoise_core::feller::KilledDiffusionResult {
    let spec = DriftSpec::new(kind, 0.0, 1.0).unwrap();
    simulate_killed_diffusion(&spec, 1.0, t, dt, &opts, &McConfig::new(n, seed).unwrap()).unwrap()
}

#[test]
fn boundary_verdicts_agree_with_the_killed_diffusion() {
    let opts = KillOptions::default();

    // Brownian motion reaches l: survival falls well below one
    let bm = DriftSpec::new(DriftKind::Zero, 0.0, 1.0).unwrap();
    assert_eq!(feller_test(&bm).left.verdict, EndVerdict::Absorbing);
    let r = run(DriftKind::Zero, 2.0, 1e-3, opts, 5000, 1);
    assert!(r.survival.value < 0.6 && r.killed_at_l > 0.4, "{:?}", r.survival);

    // Bessel-3 never does
    let bessel = DriftSpec::new(DriftKind::Bessel3, 0.0, 1.0).unwrap();
    assert_eq!(feller_test(&bessel).left.verdict, EndVerdict::NonAbsorbing);
    let r = run(DriftKind::Bessel3, 2.0, 1e-3, opts, 5000, 2);
    assert!(r.curve.iter().all(|p| p.survival > 0.99), "{:?}", r.curve.last());

    // the Ornstein–Uhlenbeck pull keeps paths finite
    let ou = DriftSpec::new(DriftKind::OrnsteinUhlenbeck { k: 1.0 }, 0.0, 1.0).unwrap();
    assert_eq!(feller_test(&ou).right.verdict, EndVerdict::NonAbsorbing);
    assert_eq!(run(DriftKind::OrnsteinUhlenbeck { k: 1.0 }, 2.0, 1e-3, opts, 5000, 3).killed_at_infinity, 0.0);

    // a quadratic push explodes in finite time
    let quad = DriftSpec::new(DriftKind::Quadratic { c: 1.0 }, 0.0, 1.0).unwrap();
    assert_eq!(feller_test(&quad).right.verdict, EndVerdict::Absorbing);
    assert!(run(DriftKind::Quadratic { c: 1.0 }, 2.0, 1e-3, opts, 2000, 4).killed_at_infinity > 0.3);
}

#[test]
fn bridge_correction_removes_the_step_bias() {
    let (t, dt, n) = (1.0, 0.01, 40_000);
    let survival = |bridge: bool, h: f64, seed: u64| {
        let opts = KillOptions { bridge, ..KillOptions::default() };
        run(DriftKind::Zero, t, h, opts, n, seed).survival.value
    };
    let corrected = (survival(true, dt, 5) - survival(true, dt / 4.0, 6)).abs();
    let raw = (survival(false, dt, 5) - survival(false, dt / 4.0, 6)).abs();
    assert!(corrected < raw, "corrected pair differs by {corrected}, uncorrected by {raw}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_drift_matches_closed_form(c in -1.0f64..1.0, x0 in 0.5f64..2.0, x in 0.05f64..3.0) {
        prop_assume!(c.abs() > 1e-3);
        let spec = DriftSpec::new(DriftKind::Constant { c }, 0.0, x0).unwrap();
        let exact = (1.0 - (4.0 * c * (x0 - x)).exp()) / (4.0 * c);
        prop_assert!((feller_function(&spec, x).unwrap() - exact).abs() < 1e-8 * (1.0 + exact.abs()));
    }

    #[test]
    fn survival_never_increases(c in -1.0f64..1.0, seed in any::<u64>()) {
        let r = run(DriftKind::Constant { c }, 1.0, 1e-2, KillOptions::default(), 500, seed);
        for w in r.curve.windows(2) {
            prop_assert!(w[1].survival <= w[0].survival);
        }
        prop_assert!((r.survival.value - r.curve.last().unwrap().survival).abs() < 1e-12);
    }
}

use proptest::prelude::*;

use qnoise_core::grid::{apply_shift, expectation, GridSpec, Lattice, Observable, WaveFunction};
use qnoise_core::levy::{sample_terminal, Atom, JumpMeasure, LevyTriplet1D};
use qnoise_core::mc::McConfig;
use qnoise_core::noise::{
    default_coarse_window, mc_evolve_state_ensemble, mc_heisenberg_expectation, momentum_covariance_check,
    NoiseSemigroupSpec,
};
use qnoise_core::stats::Accumulator;

fn triplet() -> LevyTriplet1D {
    LevyTriplet1D::new(
        0.2,
        0.3,
        JumpMeasure::from_atoms(vec![Atom { location: 1.3, rate: 0.6 }, Atom { location: -0.5, rate: 1.0 }]).unwrap(),
        1.0,
    )
    .unwrap()
}

fn setup() -> (NoiseSemigroupSpec, WaveFunction) {
    let grid = GridSpec::centered(512, 32.0).unwrap();
    let lattice = Lattice::new(grid).unwrap();
    let psi = WaveFunction::gaussian(lattice, 0.2, 0.5, 0.8);
    (NoiseSemigroupSpec::new(triplet(), grid).unwrap(), psi)
}

#[test]
fn semigroup_property_in_distribution() {
    let (spec, psi) = setup();
    let obs = Observable::position(psi.lattice(), |x| (1.3 * x).cos());
    let (t, s, n) = (0.6, 0.9, 20_000);
    let direct = mc_heisenberg_expectation(&spec, &psi, &obs, t + s, &McConfig::new(n, 1).unwrap())
        .unwrap()
        .estimate;
    // two stages with independent increments
    let first = sample_terminal(&spec.triplet, t, &McConfig::new(n, 2).unwrap()).unwrap();
    let second = sample_terminal(&spec.triplet, s, &McConfig::new(n, 3).unwrap()).unwrap();
    let mut acc = Accumulator::new();
    for (a, b) in first.iter().zip(&second) {
        let moved = apply_shift(&psi, a + b).value;
        acc.push(expectation(&moved, &obs).unwrap().value.re);
    }
    let staged = acc.estimate();
    let joint = (direct.stderr.powi(2) + staged.stderr.powi(2)).sqrt();
    assert!(
        (direct.value.re - staged.value).abs() < 4.0 * joint,
        "{} vs {} (joint stderr {joint})",
        direct.value.re,
        staged.value
    );
}

#[test]
fn noise_reduces_purity() {
    let (spec, psi) = setup();
    let (d, lo, width) = default_coarse_window(&psi);
    let start = mc_evolve_state_ensemble(&spec, &psi, 0.0, &McConfig::new(2000, 4).unwrap())
        .unwrap()
        .coarse_purity(d, lo, width)
        .unwrap();
    let later = mc_evolve_state_ensemble(&spec, &psi, 1.0, &McConfig::new(2000, 4).unwrap())
        .unwrap()
        .coarse_purity(d, lo, width)
        .unwrap();
    assert!(later < start, "purity {start} -> {later}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identity_has_no_variance(seed in any::<u64>(), t in 0.0f64..3.0) {
        let (spec, psi) = setup();
        let id = Observable::identity(psi.lattice());
        let e = mc_heisenberg_expectation(&spec, &psi, &id, t, &McConfig::new(256, seed).unwrap()).unwrap();
        prop_assert!((e.estimate.value.re - 1.0).abs() < 1e-12);
        prop_assert!(e.estimate.stderr < 1e-12);
    }

    #[test]
    fn boosts_commute_with_the_noise(seed in any::<u64>(), y in -2.0f64..2.0, t in 0.0f64..2.0) {
        let (spec, psi) = setup();
        let obs = Observable::position(psi.lattice(), |x| (-x * x / 8.0).exp());
        let d = momentum_covariance_check(&spec, &psi, &obs, y, t, &McConfig::new(256, seed).unwrap()).unwrap();
        prop_assert!(d.max_path_defect < 1e-10);
        prop_assert!(d.mean_defect < 1e-10);
    }
}

use num_complex::Complex64;
use proptest::prelude::*;

use qnoise_core::galilei::{evolve_weyl_closed_form, weyl_symbol_rate, GalileanGenerator};
use qnoise_core::grid::{expectation, GridSpec, Lattice, Observable, WaveFunction, WeylLabel};
use qnoise_core::levy::{char_exponent_1d, char_exponent_2d, Atom, Atom2, JumpMeasure, JumpMeasure2D, LevyTriplet1D, LevyTriplet2D};
use qnoise_core::mc::McConfig;
use qnoise_core::noise::{mc_heisenberg_expectation, NoiseSemigroupSpec};

fn triplet_2d() -> impl Strategy<Value = LevyTriplet2D> {
    let atoms = prop::collection::vec(
        (-1.5f64..1.5, -1.5f64..1.5, 0.01f64..1.0).prop_map(|(a, b, rate)| Atom2 { location: [a, b], rate }),
        0..3,
    );
    (-1.0f64..1.0, -1.0f64..1.0, 0.0f64..0.8, 0.0f64..0.8, -1.0f64..1.0, atoms).prop_map(|(bp, bq, app, aqq, c, atoms)| {
        LevyTriplet2D::new(bp, bq, app, c * (app * aqq).sqrt(), aqq, JumpMeasure2D::from_atoms(atoms).unwrap(), 1.0).unwrap()
    })
}

/// The 1-D process driving the momentum direction only.
fn embedded(beta: f64, alpha: f64, atoms: &[(f64, f64)]) -> (LevyTriplet1D, GalileanGenerator) {
    let one = LevyTriplet1D::new(
        beta,
        alpha,
        JumpMeasure::from_atoms(atoms.iter().map(|&(location, rate)| Atom { location, rate }).collect()).unwrap(),
        1.0,
    )
    .unwrap();
    let two = LevyTriplet2D::new(
        beta,
        0.0,
        alpha,
        0.0,
        0.0,
        JumpMeasure2D::from_atoms(atoms.iter().map(|&(y, rate)| Atom2 { location: [y, 0.0], rate }).collect()).unwrap(),
        1.0,
    )
    .unwrap();
    (one, GalileanGenerator::new(two, false).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symbol_rate_is_the_driving_exponent(t in triplet_2d(), x0 in -3.0f64..3.0, v0 in -3.0f64..3.0) {
        let g = GalileanGenerator::new(t, false).unwrap();
        let rate = weyl_symbol_rate(&g, x0, v0);
        let exponent = char_exponent_2d(&g.driving_noise(), v0, x0).unwrap();
        prop_assert!((rate - exponent).norm() < 1e-12);
    }

    #[test]
    fn weyl_symbols_contract(t in triplet_2d(), free in any::<bool>(), x0 in -2.0f64..2.0, v0 in -2.0f64..2.0) {
        let g = GalileanGenerator::new(t, free).unwrap();
        let mut last = 1.0 + 1e-12;
        for k in 0..=12 {
            let m = evolve_weyl_closed_form(&g, x0, v0, 0.25 * k as f64).unwrap().multiplier.norm();
            prop_assert!(m <= last + 1e-12);
            last = m;
        }
    }

    #[test]
    fn one_dimensional_noise_is_recovered(beta in -1.0f64..1.0, alpha in 0.0f64..1.0, y in -2.0f64..2.0, rate in 0.0f64..1.0,
                                          x0 in -2.0f64..2.0, v0 in -2.0f64..2.0, time in 0.0f64..2.0) {
        let (one, g) = embedded(beta, alpha, &[(y, rate)]);
        let closed = evolve_weyl_closed_form(&g, x0, v0, time).unwrap();
        let expected = (char_exponent_1d(&one, v0).unwrap() * time).exp();
        prop_assert!((closed.multiplier - expected).norm() < 1e-12);
        prop_assert_eq!(closed.point, WeylLabel::new(x0, v0));
    }
}

#[test]
fn one_dimensional_noise_matches_the_quantum_monte_carlo() {
    let (one, g) = embedded(0.3, 0.4, &[(1.2, 0.7), (-0.6, 0.5)]);
    let grid = GridSpec::centered(512, 32.0).unwrap();
    let lattice = Lattice::new(grid).unwrap();
    let psi = WaveFunction::gaussian(lattice, 0.1, 0.3, 1.0);
    let spec = NoiseSemigroupSpec::new(one, grid).unwrap();
    let t = 0.8;
    for (i, (x0, v0)) in [(0.4, 0.9), (-0.7, 0.5), (0.0, 1.3)].into_iter().enumerate() {
        let label = WeylLabel::new(x0, v0);
        let w = expectation(&psi, &Observable::Weyl(label)).unwrap().value;
        let closed: Complex64 = evolve_weyl_closed_form(&g, x0, v0, t).unwrap().multiplier * w;
        let mc = mc_heisenberg_expectation(&spec, &psi, &Observable::Weyl(label), t, &McConfig::new(20_000, 40 + i as u64).unwrap())
            .unwrap()
            .estimate;
        assert!(mc.z_score(closed) < 4.0, "label ({x0}, {v0}): {} vs {closed}", mc.value);
    }
}

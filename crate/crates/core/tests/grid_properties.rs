use std::sync::Arc;

use proptest::prelude::*;

use qnoise_core::grid::{
    apply_free_evolution, apply_position_phase, apply_shift, apply_weyl, GridSpec, Lattice, WaveFunction, WeylLabel,
};

fn lattice() -> Arc<Lattice> {
    Lattice::new(GridSpec::centered(1024, 40.0).unwrap()).unwrap()
}

fn state() -> impl Strategy<Value = WaveFunction> {
    (-3.0f64..3.0, -2.0f64..2.0, 0.6f64..2.0).prop_map(|(q0, p0, sigma)| WaveFunction::gaussian(lattice(), q0, p0, sigma))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn unitaries_preserve_norm(psi in state(), x in -5.0f64..5.0, v in -3.0f64..3.0, t in 0.0f64..2.0) {
        let n0 = psi.norm();
        prop_assert!((apply_shift(&psi, x).value.norm() - n0).abs() < 1e-12);
        prop_assert!((apply_position_phase(&psi, v).norm() - n0).abs() < 1e-12);
        prop_assert!((apply_weyl(&psi, WeylLabel::new(x, v)).value.norm() - n0).abs() < 1e-12);
        prop_assert!((apply_free_evolution(&psi, t).value.norm() - n0).abs() < 1e-12);
    }

    #[test]
    fn translations_compose_additively(psi in state(), x in -4.0f64..4.0, x2 in -4.0f64..4.0, y in -2.0f64..2.0, y2 in -2.0f64..2.0) {
        let twice = apply_shift(&apply_shift(&psi, x).value, x2).value;
        prop_assert!(twice.distance(&apply_shift(&psi, x + x2).value) < 1e-12);
        let boosted = apply_position_phase(&apply_position_phase(&psi, y), y2);
        prop_assert!(boosted.distance(&apply_position_phase(&psi, y + y2)) < 1e-12);
    }

    #[test]
    fn weyl_operators_displace_expectations(psi in state(), x in -4.0f64..4.0, v in -2.0f64..2.0) {
        let moved = apply_weyl(&psi, WeylLabel::new(x, v));
        prop_assert!(moved.is_clean());
        prop_assert!((moved.value.mean_position() - psi.mean_position() - x).abs() < 1e-8);
        prop_assert!((moved.value.mean_momentum() - psi.mean_momentum() - v).abs() < 1e-8);
    }
}

use num_complex::Complex64;
use proptest::prelude::*;

use qnoise_core::gks::{
    self, apply_gauge, check_duality, dyson_evolve, exact_evolve, gauge_group_law_check, generator_action_distance,
    random_gauge, random_generator, random_hermitian, CMat, DensityMatrix, StandardGenerator,
};
use qnoise_core::rng::stream_rng;

fn generator(seed: u64, d: usize, m: usize, unital: bool) -> StandardGenerator {
    random_generator(&mut stream_rng(seed, 0), d, m, unital)
}

fn random_state(seed: u64, d: usize) -> DensityMatrix {
    let a = random_hermitian(&mut stream_rng(seed, 1), d, 1.0);
    let b = random_hermitian(&mut stream_rng(seed, 2), d, 1.0);
    let z = &a + &b * Complex64::new(0.0, 1.0);
    let rho = &z * z.adjoint();
    let tr = gks::trace(&rho);
    DensityMatrix::new(rho / tr).unwrap()
}

fn operator_norm(m: &CMat) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generators_are_conditionally_cp_and_integrate_to_channels(
        seed in any::<u64>(), d in 2usize..=4, m in 1usize..=3, unital in any::<bool>()
    ) {
        let g = generator(seed, d, m, unital);
        let sup = g.superoperator();
        prop_assert!(gks::is_conditionally_cp(|x| sup.apply(x), d, 1e-10).unwrap().passed);
        for t in [0.1, 1.0, 10.0] {
            let phi = exact_evolve(&g, t);
            let report = gks::is_completely_positive(|x| phi.apply(x), d, 1e-8).unwrap();
            prop_assert!(report.passed, "t = {}: min eigenvalue {}", t, report.min_eigenvalue);
        }
    }

    #[test]
    fn identity_is_preserved_or_decreases(seed in any::<u64>(), d in 2usize..=4, m in 1usize..=3) {
        let id = CMat::identity(d, d);
        let g = generator(seed, d, m, true);
        for t in [0.1, 1.0, 10.0] {
            prop_assert!((exact_evolve(&g, t).apply(&id) - &id).camax() < 1e-10);
        }
        let g = generator(seed, d, m, false);
        let rho = random_state(seed, d);
        let mut last = 1.0 + 1e-12;
        for k in 0..=20 {
            let t = 0.25 * k as f64;
            let value = gks::trace(&(rho.matrix() * exact_evolve(&g, t).apply(&id))).re;
            prop_assert!(value <= last + 1e-12, "t = {}: {} after {}", t, value, last);
            last = value;
        }
    }

    #[test]
    fn jump_terms_decay_factorially(seed in any::<u64>(), d in 2usize..=3, m in 1usize..=2, t in 0.1f64..1.5) {
        let g = generator(seed, d, m, seed % 2 == 0);
        let id = CMat::identity(d, d);
        let rate = operator_norm(&g.jump_part().apply(&id));
        let expansion = dyson_evolve(&g, t, 8).unwrap();
        let mut bound = 1.0;
        for (n, term) in expansion.terms.iter().enumerate() {
            if n > 0 {
                bound *= rate * t / n as f64;
            }
            prop_assert!(operator_norm(&term.apply(&id)) <= bound * (1.0 + 1e-8) + 1e-12);
            prop_assert!(gks::is_completely_positive(|x| term.apply(x), d, 1e-9).unwrap().passed);
        }
    }

    #[test]
    fn gauge_transformations_leave_the_generator_invariant(seed in any::<u64>(), d in 2usize..=4, m in 1usize..=3) {
        let g = generator(seed, d, m, seed % 3 == 0);
        let mut rng = stream_rng(seed, 3);
        let (g1, g2) = (random_gauge(&mut rng, m), random_gauge(&mut rng, m));
        prop_assert!(generator_action_distance(&g, &apply_gauge(&g, &g1).unwrap()) < 1e-10);
        prop_assert!(gauge_group_law_check(&g, &g1, &g2).unwrap() < 1e-10);
    }

    #[test]
    fn predual_is_the_adjoint(seed in any::<u64>(), d in 2usize..=5, m in 1usize..=3, t in 0.0f64..2.0) {
        let g = generator(seed, d, m, seed % 2 == 1);
        let rho = random_state(seed, d);
        let x = random_hermitian(&mut stream_rng(seed, 4), d, 1.0);
        prop_assert!(check_duality(&g, &rho, &x, t).unwrap() < 1e-10);
    }
}

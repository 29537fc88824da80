//! Randomized invariants.

use hjcone::model::*;
use hjcone::nonlinearity::{h_value, InteractionSpec};
use hjcone::symcone::{project_psd, wishart, ConePoint, SymMatrix};
use hjcone::variational::{monotone_conjugate, project_feasible, FnCone, SolverOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn psd(dim: usize, seed: u64, scale: f64) -> SymMatrix {
    wishart(dim, &mut ChaCha8Rng::seed_from_u64(seed)) * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gibbs_weights_are_normalized(seed in any::<u64>(), t in 0.0f64..2.0, scale in 0.0f64..2.0) {
        let spec = ModelSpec::matrix_reference(2);
        let space = ConfigSpace::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = ConePoint::new(psd(2, seed, scale)).unwrap();
        let dis = DisorderSample::draw(&spec, &mut rng).unwrap();
        let s = gibbs_exact(&space, t, &h, &dis).unwrap();
        prop_assert!(s.f_n.is_finite());
        prop_assert!(s.weights.iter().all(|w| *w >= 0.0));
        prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reduced_and_explicit_hamiltonians_agree(seed in any::<u64>(), t in 0.0f64..1.0) {
        let spec = ModelSpec::reference(3);
        let space = ConfigSpace::new(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = ConePoint::new(psd(1, seed, 1.0)).unwrap();
        let dis = DisorderSample::draw(&spec, &mut rng).unwrap();
        let s = gibbs_exact(&space, t, &h, &dis).unwrap();
        // Posterior odds from the explicit Hamiltonian.
        let e: Vec<f64> = (0..space.len())
            .map(|k| hamiltonian(&spec, t, &h, space.config(k), &dis).unwrap())
            .collect();
        for k in 1..space.len() {
            let lhs = (s.weights[k] / s.weights[0]).ln();
            prop_assert!((lhs - (e[k] - e[0])).abs() < 1e-9);
        }
    }

    #[test]
    fn feasible_projection_is_idempotent(seed in any::<u64>(), radius in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = wishart(3, &mut rng) - wishart(3, &mut rng) * 1.5;
        let p = project_feasible(&x, radius).unwrap();
        prop_assert!(p.norm() <= radius * (1.0 + 1e-12));
        prop_assert!(p.min_eigenvalue().unwrap() >= -1e-12);
        prop_assert!((project_feasible(&p, radius).unwrap() - p).norm() < 1e-12);
    }

    #[test]
    fn half_square_conjugate_closed_form(seed in any::<u64>()) {
        // sup_{x PSD} inner(h, x) - |x|^2 / 2 = |P_psd(h)|^2 / 2.
        let g = FnCone::new(2, "half square", |x| Ok(0.5 * x.inner(x)?)).with_gradient(|x| Ok(*x));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = wishart(2, &mut rng) - wishart(2, &mut rng);
        let r = monotone_conjugate(&g, &h, 1.0, &SolverOptions { starts: 2, ..SolverOptions::default() })
            .unwrap()
            .finite()
            .unwrap();
        let p = project_psd(&h).unwrap().into_matrix();
        prop_assert!((r.value - 0.5 * p.inner(&p).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn h_is_monotone_along_psd_directions(seed in any::<u64>()) {
        let spec = InteractionSpec::identity_flattened(2).unwrap();
        let a = psd(2, seed, 1.0);
        let b = psd(2, seed.wrapping_add(1), 0.5);
        prop_assert!(h_value(&spec, &(a + b)).unwrap() >= h_value(&spec, &a).unwrap() - 1e-12);
    }
}

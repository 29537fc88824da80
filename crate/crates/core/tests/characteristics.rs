//! The characteristic solution against the variational one in the short-time regime.

use hjcone::characteristics::*;
use hjcone::model::{PriorSpec, PsiOracle};
use hjcone::nonlinearity::{estimate_lipschitz, h_grad, InteractionSpec};
use hjcone::symcone::{ConePoint, SymMatrix};
use hjcone::variational::{HopfSolver, SolverOptions};

fn scalar(v: f64) -> ConePoint {
    ConePoint::new(SymMatrix::diag(&[v])).unwrap()
}

fn setup() -> (PsiOracle, InteractionSpec, f64) {
    let psi = PsiOracle::new(&PriorSpec::rademacher(), 64).unwrap();
    let spec = InteractionSpec::scalar_quadratic();
    let oracle = |q: &SymMatrix| psi.gradient(q);
    let lip = estimate_lipschitz(&spec, &oracle, 2.0, 200, 1).unwrap();
    (psi.clone(), spec, short_time_horizon(lip.l_hat))
}

#[test]
fn u_agrees_with_hopf_on_the_short_time_grid() {
    let (psi, spec, t_max) = setup();
    assert!(t_max > 0.15 && t_max < 0.25, "{t_max}");
    let solver = HopfSolver::new(psi.clone(), spec.clone(), SolverOptions::default()).unwrap();
    for frac in [0.1, 0.3, 0.5] {
        let t = frac * t_max;
        for k in 1..=10 {
            let h = scalar(0.1 * k as f64);
            let der = u_derivatives(&psi, &spec, t, &h, 1e-4, 1e-12, 500).unwrap();
            let sol = &der.solution;
            let f = solver.hopf(t, &h).unwrap().value;
            assert!((sol.u.unwrap() - f).abs() < 1e-4);
            assert!(sol.residual <= 1e-10 && sol.min_iterate_eigenvalue >= -1e-10);
            let gz = psi.gradient(&sol.z).unwrap();
            assert!((der.grad_h - gz).norm() < 1e-4);
        }
    }
}

#[test]
fn inverse_consistency_and_iteration_bound() {
    let (psi, spec, t_max) = setup();
    let tol: f64 = 1e-12;
    let bound = (tol.ln() / 0.9f64.ln()).ceil() as usize + 2;
    for k in [0.1, 0.4, 1.0] {
        let sol = char_invert(&psi, &spec, 0.9 * t_max, &scalar(k), tol, 10_000).unwrap();
        assert!(sol.iterations <= bound, "{} > {bound}", sol.iterations);
        let back = char_forward(&psi, &spec, 0.9 * t_max, &ConePoint::new(sol.z).unwrap()).unwrap();
        assert!((back.get(0, 0) - k).abs() < 1e-9);
        let forward = char_forward(&psi, &spec, 0.5 * t_max, &scalar(k)).unwrap();
        let z = char_invert(&psi, &spec, 0.5 * t_max, &ConePoint::new(forward).unwrap(), tol, 10_000).unwrap();
        assert!((z.z.get(0, 0) - k).abs() < 1e-9);
        // The displacement grad H(grad psi(h)) is PSD.
        let g = h_grad(&spec, &psi.gradient(&SymMatrix::diag(&[k])).unwrap()).unwrap();
        assert!(g.min_eigenvalue().unwrap() >= 0.0);
    }
}

#[test]
fn smoothness_report_on_the_reference_instance() {
    let (psi, spec, t_max) = setup();
    let path: Vec<ConePoint> = (1..=10).map(|k| scalar(0.1 * k as f64)).collect();
    let report = smoothness_report(&psi, &spec, t_max, &[0.1, 0.5, 0.9], &path, 1e-4, 1e-12, 500).unwrap();
    assert_eq!(report.rows.len(), 30);
    assert_eq!(report.flags, 0);
    assert!(report.max_hj_residual < 1e-3);
}

#[test]
fn matrix_instance_round_trip() {
    let psi = PsiOracle::new(&PriorSpec::product_rademacher(2).unwrap(), 16).unwrap();
    let spec = InteractionSpec::identity_flattened(2).unwrap();
    let k = ConePoint::new(SymMatrix::from_rows(&[vec![0.5, 0.1], vec![0.1, 0.3]]).unwrap()).unwrap();
    let sol = char_invert(&psi, &spec, 0.08, &k, 1e-12, 1000).unwrap();
    let back = char_forward(&psi, &spec, 0.08, &ConePoint::new(sol.z).unwrap()).unwrap();
    assert!((back - *k.matrix()).norm() < 1e-10);
    assert!(sol.z.min_eigenvalue().unwrap() >= -1e-10);
}

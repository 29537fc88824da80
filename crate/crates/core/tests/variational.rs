//! Hopf and Hopf-Lax values on the reference instance against independent oracles.

use hjcone::model::{PriorSpec, PsiOracle};
use hjcone::nonlinearity::InteractionSpec;
use hjcone::quadrature::GaussHermite;
use hjcone::symcone::{ConePoint, SymMatrix};
use hjcone::variational::*;

fn scalar(v: f64) -> ConePoint {
    ConePoint::new(SymMatrix::diag(&[v])).unwrap()
}

fn reference_solver() -> HopfSolver<PsiOracle> {
    HopfSolver::new(
        PsiOracle::new(&PriorSpec::rademacher(), 64).unwrap(),
        InteractionSpec::scalar_quadratic(),
        SolverOptions::default(),
    )
    .unwrap()
}

/// psi for the Rademacher prior from its one-dimensional form, on a 1-d rule.
fn psi_1d(h: f64) -> f64 {
    let gh = GaussHermite::new(96).unwrap();
    gh.integrate(|z| {
        let x: f64 = 2.0 * h + (2.0 * h).sqrt() * z;
        x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2
    }) - h
}

#[test]
fn hopf_matches_a_dense_double_grid() {
    // psi on x in [0, 12] at step 1e-3, psi* by scanning that grid, then the
    // outer sup over h' in [0, 1.5] at step 1e-4.
    let xs: Vec<f64> = (0..=12_000).map(|k| k as f64 * 1e-3).collect();
    let psi: Vec<f64> = xs.iter().map(|&x| psi_1d(x)).collect();
    let (t, h) = (0.2, 0.3);
    let mut best = f64::NEG_INFINITY;
    for k in 0..=15_000 {
        let hp = k as f64 * 1e-4;
        let conj = xs
            .iter()
            .zip(&psi)
            .map(|(x, p)| hp * x - p)
            .fold(f64::NEG_INFINITY, f64::max);
        best = best.max(hp * h - conj + t * hp * hp);
    }
    let r = reference_solver().hopf(t, &scalar(h)).unwrap();
    assert!((r.value - best).abs() < 1e-5, "{} vs {best}", r.value);
}

#[test]
fn hopf_and_hopf_lax_agree() {
    let solver = reference_solver();
    assert!(solver.convex());
    for (t, h) in [(0.2, 0.3), (0.05, 0.9), (0.4, 0.1)] {
        let a = solver.hopf(t, &scalar(h)).unwrap();
        for form in [HopfLaxForm::Standard, HopfLaxForm::Scaled] {
            let b = solver.hopf_lax(t, &scalar(h), form).unwrap();
            assert!((a.value - b.value).abs() < 2e-5, "t={t} h={h} {form:?}: {} vs {}", a.value, b.value);
            // h' = 0 is feasible, so psi(h) - t H*(0) = psi(h) bounds the value below.
            assert!(b.value >= solver.psi().value(&SymMatrix::diag(&[h])).unwrap() - 1e-12);
        }
    }
}

#[test]
fn vanishing_time_recovers_psi() {
    let solver = reference_solver();
    let psi = solver.psi().value(&SymMatrix::diag(&[0.3])).unwrap();
    for form in [HopfLaxForm::Standard, HopfLaxForm::Scaled] {
        let v = solver.hopf_lax(1e-4, &scalar(0.3), form).unwrap().value;
        assert!((v - psi).abs() < 1e-3);
    }
    assert!((solver.hopf(0.0, &scalar(0.3)).unwrap().value - psi).abs() < 1e-6);
}

#[test]
fn hopf_is_the_max_over_its_starts_and_reproducible() {
    let solver = reference_solver();
    let r = solver.hopf(0.2, &scalar(0.3)).unwrap();
    assert!(r.terminals.iter().all(|(v, _)| *v <= r.value));
    assert_eq!(r.starts, 16);
    // The maximizer reproduces the value through the (memoized) objective.
    let hp = *r.maximizer.matrix();
    let (conj, _) = solver.psi_star(&hp).unwrap().unwrap();
    let again = hp.get(0, 0) * 0.3 - conj + 0.2 * hp.get(0, 0).powi(2);
    assert!((again - r.value).abs() < 1e-10);
    let again = reference_solver().hopf(0.2, &scalar(0.3)).unwrap();
    assert_eq!(again.value.to_bits(), r.value.to_bits());
}

#[test]
fn f_is_monotone_convex_and_lipschitz_in_h() {
    let solver = reference_solver();
    let hs: Vec<f64> = (1..=8).map(|k| 0.15 * k as f64).collect();
    for t in [0.0, 0.1, 0.3] {
        let f: Vec<f64> = hs.iter().map(|&h| solver.hopf(t, &scalar(h)).unwrap().value).collect();
        for w in f.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
            // D sqrt(D) = 1 bounds the slope.
            assert!((w[1] - w[0]) / 0.15 <= 1.0 + 1e-9);
        }
        for w in f.windows(3) {
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-9);
        }
    }
    let ft: Vec<f64> = [0.0, 0.1, 0.2, 0.3].iter().map(|&t| solver.hopf(t, &scalar(0.5)).unwrap().value).collect();
    assert!(ft.windows(2).all(|w| w[1] >= w[0] - 1e-12));
}

#[test]
fn maximizer_diagnostics_at_the_reference_point() {
    let solver = reference_solver();
    let h = scalar(0.3);
    let hopf = solver.hopf(0.2, &h).unwrap();
    let d = solver.diagnostics(&hopf, 0.2, &h, 1e-4).unwrap();
    assert!(d.differentiable && !d.tie);
    assert!(d.a1.unwrap() < 1e-3 && d.a2.unwrap() < 1e-3);
    assert!(d.hj_residual < 1e-3);
    for form in [HopfLaxForm::Standard, HopfLaxForm::Scaled] {
        let lax = solver.hopf_lax(0.2, &h, form).unwrap();
        let d = solver.diagnostics(&lax, 0.2, &h, 1e-4).unwrap();
        assert!(d.b1.unwrap() < 1e-3);
    }
    // At t = 0 the Hopf maximizer is grad psi(h).
    let r0 = solver.hopf(0.0, &h).unwrap();
    let g = solver.psi().gradient(h.matrix()).unwrap();
    assert!((r0.maximizer.matrix().get(0, 0) - g.get(0, 0)).abs() < 1e-6);
}

#[test]
fn non_convex_interaction_disables_hopf_lax() {
    // H(q) = (a a^T) . q^{(x)2} with an indefinite Gram fails the convexity probe.
    let spec = InteractionSpec::new(2, 2, &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let probe = hjcone::nonlinearity::convexity_probe(&spec, 200, 0).unwrap();
    let solver = HopfSolver::new(
        PsiOracle::new(&PriorSpec::product_rademacher(2).unwrap(), 8).unwrap(),
        spec,
        SolverOptions::default(),
    )
    .unwrap();
    assert_eq!(solver.convex(), probe.passed());
    if !probe.passed() {
        let h = ConePoint::new(SymMatrix::identity(2) * 0.3).unwrap();
        assert!(matches!(
            solver.hopf_lax(0.1, &h, HopfLaxForm::Standard),
            Err(hjcone::Error::FormulaUnavailable(_))
        ));
    }
}

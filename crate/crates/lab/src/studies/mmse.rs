//! Finite-N MMSE against its limit built from derivatives of f.

use hjcone::model::{quenched, tensor_second_moment_limit, ConfigSpace, GibbsSummary, Truth};
use hjcone::symcone::{ConePoint, SymMatrix};
use hjcone::variational::Formula;

use super::{averaging_for, columns, h_columns, hopf_solver, names, prefixed_columns, tri, tri_distance};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{CheckContext, Result};
use crate::report::{CriterionBuilder, StudyReport};

/// Points of the large-signal sanity check: `h = LOW I` against `h = HIGH I`.
pub const SANITY_LOW: f64 = 0.1;
pub const SANITY_HIGH: f64 = 5.0;

struct Target {
    matrix: Vec<f64>,
    scalar: f64,
    screened: bool,
}

/// `[(1/N)(X - <x>)^T (X - <x>) upper triangle..., N^-p |X^p A - <x^p A>|^2]`.
fn mmse_estimator(space: &ConfigSpace) -> impl Fn(&GibbsSummary, &Truth) -> hjcone::Result<Vec<f64>> + Sync + '_ {
    let spec = space.spec();
    let (n, d) = (spec.n, spec.d());
    let scale = 1.0 / (n as f64).powi(spec.interaction.p() as i32);
    move |s, truth| {
        let err: Vec<f64> = truth.x.iter().zip(&s.mean_x).map(|(a, b)| a - b).collect();
        let mut v = Vec::new();
        for a in 0..d {
            for b in a..d {
                v.push((0..n).map(|i| err[i * d + a] * err[i * d + b]).sum::<f64>() / n as f64);
            }
        }
        let tensor_err: f64 = space
            .projection(truth.index)
            .iter()
            .zip(&s.mean_proj)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        v.push(scale * tensor_err);
        Ok(v)
    }
}

pub fn run_mmse(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let tol = &cfg.tolerances;
    let d = cfg.d();
    let nb = d * (d + 1) / 2;
    let hs = cfg.h_points()?;
    let solver = hopf_solver(cfg)?;
    let fd_step = cfg.solver()?.fd_step;
    let second = cfg.instance.prior.second_moment();
    let moment_limit = tensor_second_moment_limit(&cfg.instance.model(1)?)?;
    let mc = cfg.averaging()?.mode == Mode::Mc;
    let sigmas = if mc { tol.mc_sigmas } else { 0.0 };

    let mut targets = Vec::new();
    for &t in &cfg.t_grid {
        for h in &hs {
            let der = solver.derivatives(Formula::Hopf, t, h, fd_step).check(&format!("limit t={t}"))?;
            let tie = solver.hopf(t, h)?.tie;
            targets.push(Target {
                matrix: tri(&(second - der.grad_h)),
                scalar: moment_limit - der.d_t,
                screened: der.two_sided && der.quotient_gap < tol.screen && !tie,
            });
        }
    }

    let value_columns = columns(&[
        &names(&["N", "t"]),
        &h_columns(d),
        &prefixed_columns("mmse", d),
        &prefixed_columns("mmse_se", d),
        &prefixed_columns("limit", d),
        &names(&["matrix_gap", "mmse_scalar", "mmse_scalar_se", "limit_scalar", "scalar_gap", "screened"]),
    ]);
    let mut report = StudyReport::new(cfg, &[], value_columns);
    let mut origin = CriterionBuilder::new("origin_values", "tolerances.trivial", tol.trivial);
    let mut decay = CriterionBuilder::new("gap_decay", "compare_n", 0.0);
    let mut scalar_decay = CriterionBuilder::new("scalar_gap_decay", "compare_n", 0.0);
    let mut sanity = CriterionBuilder::new("large_h_sanity", "tolerances.mc_sigmas", sigmas);

    let mu = cfg.instance.prior.mean();
    let mut gaps: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let check = format!("mmse N={n}");
        let space = ConfigSpace::new(&cfg.instance.model(n)?).check(&check)?;
        let av = averaging_for(cfg, n)?;
        let est = mmse_estimator(&space);

        // Origin: no observations, so MMSE_N is the prior covariance, exactly.
        let at_origin = quenched(
            &space,
            0.0,
            &ConePoint::zero(d),
            &hjcone::model::Averaging::quadrature(1, hjcone::model::QuadratureScheme::Noise),
            &est,
        )
        .check(&check)?;
        let cov = SymMatrix::from_fn(d, |a, b| second.get(a, b) - mu[a] * mu[b]);
        origin.check(tri_distance(d, &at_origin.value[..nb], &tri(&cov)));

        let low = quenched(&space, cfg.t_grid[0], &ConePoint::new(SymMatrix::identity(d) * SANITY_LOW)?, &av, &est)
            .check(&check)?;
        let high = quenched(&space, cfg.t_grid[0], &ConePoint::new(SymMatrix::identity(d) * SANITY_HIGH)?, &av, &est)
            .check(&check)?;
        for a in 0..d {
            let k = diag_index(d, a);
            let allowance = sigmas * (low.std_error[k] + high.std_error[k]);
            sanity.check_bool(high.value[k] < low.value[k] + allowance, high.value[k] - low.value[k]);
        }

        let mut per_n = Vec::new();
        let mut k = 0;
        for &t in &cfg.t_grid {
            for h in &hs {
                let e = quenched(&space, t, h, &av, &est).check(&check)?;
                let target = &targets[k];
                let gap = tri_distance(d, &e.value[..nb], &target.matrix);
                let scalar_gap = (e.value[nb] - target.scalar).abs();
                per_n.push((gap, scalar_gap));
                let mut v = vec![n as f64, t];
                v.extend(tri(h.matrix()));
                v.extend_from_slice(&e.value[..nb]);
                v.extend_from_slice(&e.std_error[..nb]);
                v.extend_from_slice(&target.matrix);
                v.extend([gap, e.value[nb], e.std_error[nb], target.scalar, scalar_gap, f64::from(u8::from(target.screened))]);
                rows.push(v);
                k += 1;
            }
        }
        gaps.push(per_n);
    }
    let pos = |n: usize| cfg.n_list.iter().position(|&m| m == n).expect("validated");
    let (small, large) = (pos(cfg.compare_n[0]), pos(cfg.compare_n[1]));
    let per_n = targets.len();
    let mut pass = vec![true; rows.len()];
    let mut excluded = 0;
    for (k, target) in targets.iter().enumerate() {
        if !target.screened {
            excluded += 1;
            continue;
        }
        let (g_small, s_small) = gaps[small][k];
        let (g_large, s_large) = gaps[large][k];
        pass[large * per_n + k] &= decay.check_bool(g_large < g_small, g_large - g_small);
        pass[large * per_n + k] &= scalar_decay.check_bool(s_large < s_small, s_large - s_small);
    }
    for c in [&mut decay, &mut scalar_decay] {
        c.note(format!(
            "gap at N = {} must be strictly below N = {}; {excluded} non-differentiable points excluded",
            cfg.compare_n[1], cfg.compare_n[0]
        ));
    }
    sanity.note(format!(
        "diagonal MMSE at h = {SANITY_HIGH} I below h = {SANITY_LOW} I at t = {}",
        cfg.t_grid[0]
    ));
    for (v, p) in rows.into_iter().zip(pass) {
        report.push_row(Vec::new(), v, p);
    }
    report.criteria = vec![origin.finish(), decay.finish(), scalar_decay.finish(), sanity.finish()];
    Ok(report)
}

fn diag_index(d: usize, a: usize) -> usize {
    // Row a of the upper triangle starts after sum_{i<a} (d - i) entries.
    (0..a).map(|i| d - i).sum()
}

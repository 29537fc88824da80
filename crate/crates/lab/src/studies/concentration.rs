//! Overlap concentration around the gradient of the limit.

use hjcone::model::{quenched, ConfigSpace, GibbsSummary, Truth};
use hjcone::symcone::SymMatrix;
use hjcone::variational::Formula;
use hjcone::Error;

use super::{averaging_for, columns, full_columns, h_columns, hopf_solver, names, prefixed_columns, tri};
use crate::config::ExperimentConfig;
use crate::error::{CheckContext, LabError, Result};
use crate::report::{CriterionBuilder, StudyReport};

struct Target {
    grad: SymMatrix,
    maximizer_gap: f64,
    screened: bool,
}

struct Measured {
    q: Vec<f64>,
    r: Vec<f64>,
    /// `|E<Q> - grad f|` and its (uncorrelated) standard error.
    dist: (f64, f64),
    dev_center: (f64, f64),
    dev_mean: (f64, f64),
    ell0: f64,
    ell1: f64,
}

pub fn run_concentration(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let tol = &cfg.tolerances;
    let d = cfg.d();
    let dd = d * d;
    let hs = cfg.h_points()?;
    if let Some(t) = cfg.t_grid.iter().find(|t| **t <= 0.0) {
        return Err(LabError::Check {
            check: "concentration".into(),
            source: Error::Domain(format!("concentration needs t > 0, got t = {t}")),
        });
    }
    if let Some(i) = hs.iter().position(|h| !h.is_interior()) {
        return Err(LabError::Check {
            check: "concentration".into(),
            source: Error::Domain(format!(
                "concentration needs h strictly positive definite (interior of the cone); h_grid[{i}] is on the boundary"
            )),
        });
    }
    let solver = hopf_solver(cfg)?;
    let fd_step = cfg.solver()?.fd_step;
    let mut targets = Vec::new();
    for &t in &cfg.t_grid {
        for h in &hs {
            let check = format!("gradient of f t={t}");
            let hopf = solver.hopf(t, h).check(&check)?;
            let der = solver.derivatives(Formula::Hopf, t, h, fd_step).check(&check)?;
            targets.push(Target {
                maximizer_gap: (*hopf.maximizer.matrix() - der.grad_h).norm(),
                screened: der.two_sided && der.quotient_gap < tol.screen && !hopf.tie,
                grad: der.grad_h,
            });
        }
    }

    let mut measured: Vec<Vec<Measured>> = Vec::new();
    for &n in &cfg.n_list {
        let check = format!("overlaps N={n}");
        let space = ConfigSpace::new(&cfg.instance.model(n)?).check(&check)?;
        let av = averaging_for(cfg, n)?;
        let mut per_n = Vec::new();
        let mut k = 0;
        for &t in &cfg.t_grid {
            for h in &hs {
                let center = targets[k].grad.as_slice().to_vec();
                let first = quenched(&space, t, h, &av, |s: &GibbsSummary, truth: &Truth| {
                    let mut v = s.overlap_mean(truth);
                    v.extend(s.replica_overlap_mean().as_slice());
                    v.push(s.overlap_abs_dev(&space, truth, &center));
                    let own = s.l_mean(h, truth)?;
                    v.push(s.l_sq_dev(&space, h, truth, &own)?);
                    v.extend(own.upper_triangle());
                    Ok(v)
                })
                .check(&check)?;
                let q = first.value[..dd].to_vec();
                let mean_l = first.sym(d, 2 * dd + 2);
                let second = quenched(&space, t, h, &av, |s: &GibbsSummary, truth: &Truth| {
                    Ok(vec![
                        s.overlap_abs_dev(&space, truth, &q),
                        s.l_sq_dev(&space, h, truth, &mean_l)?,
                    ])
                })
                .check(&check)?;
                let g = targets[k].grad.as_slice();
                let dist = q.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let dist_se = first.std_error[..dd].iter().map(|s| s * s).sum::<f64>().sqrt();
                per_n.push(Measured {
                    r: first.value[dd..2 * dd].to_vec(),
                    dist: (dist, dist_se),
                    dev_center: (first.value[2 * dd], first.std_error[2 * dd]),
                    dev_mean: (second.value[0], second.std_error[0]),
                    ell0: first.value[2 * dd + 1].max(0.0).sqrt(),
                    ell1: second.value[1].max(0.0).sqrt(),
                    q,
                });
                k += 1;
            }
        }
        measured.push(per_n);
    }

    let mut decay = CriterionBuilder::new("deviation_decay", "compare_n", 0.0);
    let mut mean_decay = CriterionBuilder::new("mean_deviation_decay", "tolerances.mc_sigmas", tol.mc_sigmas);
    let mut monotone = CriterionBuilder::new("overlap_monotone", "tolerances.mc_sigmas", tol.mc_sigmas);
    let mut triangle = CriterionBuilder::new("ell_triangle", "definition", 0.0);
    let pos = |n: usize| cfg.n_list.iter().position(|&m| m == n).expect("validated");
    let (small, large) = (pos(cfg.compare_n[0]), pos(cfg.compare_n[1]));
    let mut order: Vec<usize> = (0..cfg.n_list.len()).collect();
    order.sort_by_key(|&i| cfg.n_list[i]);
    let per_n = targets.len();
    let mut pass = vec![true; per_n * cfg.n_list.len()];
    let mut excluded = 0;
    for (k, target) in targets.iter().enumerate() {
        for ni in 0..cfg.n_list.len() {
            let m = &measured[ni][k];
            pass[ni * per_n + k] &= triangle.check_bool(m.ell0 <= 2.0 * m.ell1, m.ell0 - 2.0 * m.ell1);
        }
        if !target.screened {
            excluded += 1;
            continue;
        }
        let (a, b) = (&measured[small][k], &measured[large][k]);
        pass[large * per_n + k] &= decay.check_bool(b.dev_center.0 < a.dev_center.0, b.dev_center.0 - a.dev_center.0);
        let allowance = tol.mc_sigmas * a.dev_mean.1.hypot(b.dev_mean.1);
        pass[large * per_n + k] &= mean_decay.check_against(b.dev_mean.0 - a.dev_mean.0, allowance);
        for w in order.windows(2) {
            let (a, b) = (&measured[w[0]][k], &measured[w[1]][k]);
            let allowance = tol.mc_sigmas * a.dist.1.hypot(b.dist.1);
            pass[w[1] * per_n + k] &= monotone.check_against(b.dist.0 - a.dist.0, allowance);
        }
    }
    let screened_note = format!("{excluded} non-differentiable points excluded");
    decay.note(format!(
        "E<|Q - grad f|> at N = {} must be strictly below N = {}; {screened_note}",
        cfg.compare_n[1], cfg.compare_n[0]
    ));
    mean_decay.note(format!("increase of E<|Q - E<Q>|> bounded by mc_sigmas combined errors; {screened_note}"));
    monotone.note(format!(
        "|E<Q> - grad f| may grow between consecutive N by at most mc_sigmas combined errors; {screened_note}"
    ));

    let value_columns = columns(&[
        &names(&["N", "t"]),
        &h_columns(d),
        &prefixed_columns("grad_f", d),
        &names(&["maximizer_gap", "screened"]),
        &full_columns("q", d),
        &full_columns("r", d),
        &names(&[
            "dist_q_grad",
            "dist_se",
            "dev_grad",
            "dev_grad_se",
            "dev_mean",
            "dev_mean_se",
            "ell0",
            "ell1",
        ]),
    ]);
    let mut report = StudyReport::new(cfg, &[], value_columns);
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        let mut k = 0;
        for &t in &cfg.t_grid {
            for h in &hs {
                let (m, target) = (&measured[ni][k], &targets[k]);
                let mut v = vec![n as f64, t];
                v.extend(tri(h.matrix()));
                v.extend(tri(&target.grad));
                v.extend([target.maximizer_gap, f64::from(u8::from(target.screened))]);
                v.extend(&m.q);
                v.extend(&m.r);
                v.extend([m.dist.0, m.dist.1, m.dev_center.0, m.dev_center.1, m.dev_mean.0, m.dev_mean.1, m.ell0, m.ell1]);
                report.push_row(Vec::new(), v, pass[ni * per_n + k]);
                k += 1;
            }
        }
    }
    let worst_gap = targets.iter().map(|t| t.maximizer_gap).fold(0.0, f64::max);
    report.metric("max_maximizer_gradient_gap", worst_gap);
    report.criteria = vec![decay.finish(), mean_decay.finish(), monotone.finish(), triangle.finish()];
    Ok(report)
}

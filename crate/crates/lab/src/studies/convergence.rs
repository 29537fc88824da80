//! Quenched free energies at finite N against the variational limit.

use hjcone::model::{quenched, ConfigSpace, GibbsSummary, Truth};

use super::{averaging_for, columns, h_columns, hopf_solver, names, tri};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{CheckContext, Result};
use crate::report::{CriterionBuilder, StudyReport};

struct Cell {
    mean: f64,
    se: f64,
    var: f64,
}

pub fn run_convergence(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let tol = &cfg.tolerances;
    let d = cfg.d();
    let hs = cfg.h_points()?;
    let solver = hopf_solver(cfg)?;
    let mc = cfg.averaging()?.mode == Mode::Mc;
    let sigmas = if mc { tol.mc_sigmas } else { 0.0 };

    // f(t, h) once per grid point, shared by every N.
    let mut limit = Vec::with_capacity(cfg.t_grid.len() * hs.len());
    for &t in &cfg.t_grid {
        for h in &hs {
            limit.push(solver.hopf(t, h).check(&format!("hopf t={t}"))?.value);
        }
    }
    let psi: Vec<f64> = hs
        .iter()
        .map(|h| solver.psi().value(h.matrix()))
        .collect::<hjcone::Result<_>>()?;

    let mut cells: Vec<Vec<Cell>> = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let check = format!("free_energy N={n}");
        let space = ConfigSpace::new(&cfg.instance.model(n)?).check(&check)?;
        let av = averaging_for(cfg, n)?;
        let mut row = Vec::with_capacity(limit.len());
        for &t in &cfg.t_grid {
            for h in &hs {
                let est = quenched(&space, t, h, &av, |s: &GibbsSummary, _: &Truth| Ok(vec![s.f_n, s.f_n * s.f_n]))
                    .check(&check)?;
                row.push(Cell {
                    mean: est.value[0],
                    se: est.std_error[0],
                    var: (est.value[1] - est.value[0] * est.value[0]).max(0.0),
                });
            }
        }
        cells.push(row);
    }

    let nh = hs.len();
    let idx = |ti: usize, hi: usize| ti * nh + hi;
    let mut initial = CriterionBuilder::new("initial_condition", "tolerances.initial_condition", tol.initial_condition);
    let mut convex = CriterionBuilder::new("convexity_in_h", "tolerances.convexity", tol.convexity);
    let mut decay = CriterionBuilder::new("gap_decay", "compare_n", 0.0);
    let mut row_pass = vec![vec![true; limit.len()]; cfg.n_list.len()];

    for (ni, row) in cells.iter().enumerate() {
        for (ti, &t) in cfg.t_grid.iter().enumerate() {
            if t == 0.0 {
                for hi in 0..nh {
                    let c = &row[idx(ti, hi)];
                    let ok = initial.check_against((c.mean - psi[hi]).abs(), tol.initial_condition + sigmas * c.se);
                    row_pass[ni][idx(ti, hi)] &= ok;
                }
            }
            for hi in 1..nh.saturating_sub(1) {
                let (a, b, c) = (hs[hi - 1].matrix(), hs[hi].matrix(), hs[hi + 1].matrix());
                if ((*a + *c) * 0.5 - *b).norm() > 1e-12 {
                    continue;
                }
                let (fa, fb, fc) = (&row[idx(ti, hi - 1)], &row[idx(ti, hi)], &row[idx(ti, hi + 1)]);
                let excess = fb.mean - 0.5 * (fa.mean + fc.mean);
                let allowance = sigmas * (fb.se + 0.5 * (fa.se + fc.se));
                let ok = convex.check_against(excess, tol.convexity + allowance);
                row_pass[ni][idx(ti, hi)] &= ok;
            }
        }
    }
    if mc {
        initial.note(format!("Monte Carlo bounds add {} standard errors", tol.mc_sigmas));
        convex.note(format!("Monte Carlo bounds add {} standard errors", tol.mc_sigmas));
    }

    let pos = |n: usize| cfg.n_list.iter().position(|&m| m == n).expect("validated");
    let (small, large) = (pos(cfg.compare_n[0]), pos(cfg.compare_n[1]));
    let mut rates = Vec::new();
    for (ti, &t) in cfg.t_grid.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        for hi in 0..nh {
            let k = idx(ti, hi);
            let gap = |ni: usize| (cells[ni][k].mean - limit[k]).abs();
            let ok = decay.check_bool(gap(large) < gap(small), gap(large) - gap(small));
            row_pass[large][k] &= ok;
            // Least-squares slope of log gap against log N.
            let pts: Vec<(f64, f64)> = cfg
                .n_list
                .iter()
                .enumerate()
                .filter(|(ni, _)| gap(*ni) > 0.0)
                .map(|(ni, &n)| ((n as f64).ln(), gap(ni).ln()))
                .collect();
            if pts.len() >= 2 {
                let m = pts.len() as f64;
                let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
                let (mx, my) = (sx / m, sy / m);
                let cov: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
                let var: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
                rates.push(cov / var);
            }
        }
    }
    decay.note(format!(
        "|F_N - f| at N = {} must be strictly below its value at N = {} for t > 0",
        cfg.compare_n[1], cfg.compare_n[0]
    ));

    let value_columns = columns(&[
        &names(&["N", "t"]),
        &h_columns(d),
        &names(&["F_N", "std_error", "var_F_N", "f", "gap"]),
    ]);
    let mut report = StudyReport::new(cfg, &[], value_columns);
    for (ni, &n) in cfg.n_list.iter().enumerate() {
        for (ti, &t) in cfg.t_grid.iter().enumerate() {
            for (hi, h) in hs.iter().enumerate() {
                let k = idx(ti, hi);
                let c = &cells[ni][k];
                let mut v = vec![n as f64, t];
                v.extend(tri(h.matrix()));
                v.extend([c.mean, c.se, c.var, limit[k], (c.mean - limit[k]).abs()]);
                report.push_row(Vec::new(), v, row_pass[ni][k]);
            }
        }
    }
    rates.sort_by(f64::total_cmp);
    report.metric("median_gap_rate", rates.get(rates.len() / 2).copied().unwrap_or(f64::NAN));
    report.criteria = vec![initial.finish(), convex.finish(), decay.finish()];
    Ok(report)
}


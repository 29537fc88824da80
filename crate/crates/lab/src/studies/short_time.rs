//! The characteristic solution against the Hopf value below the contraction horizon.

use hjcone::characteristics::{short_time_horizon, smoothness_report, u_value, ITERATE_PSD_TOL};
use hjcone::nonlinearity::estimate_lipschitz;
use hjcone::symcone::SymMatrix;

use super::{columns, derive_seed, h_columns, hopf_solver, names, tag, tri};
use crate::config::ExperimentConfig;
use crate::error::{CheckContext, LabError, Result};
use crate::report::{CriterionBuilder, StudyReport};

/// Largest fixed-point evaluation count for contraction factor `q` and target `tol`,
/// starting from an initial residual of order one.
pub fn iteration_bound(tol: f64, q: f64) -> usize {
    (tol.ln() / q.ln()).ceil() as usize + 2
}

pub fn run_short_time(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let st = cfg
        .short_time
        .as_ref()
        .ok_or_else(|| LabError::Config("short_time study needs [short_time]".into()))?;
    let tol = &cfg.tolerances;
    let d = cfg.d();
    let hs = cfg.h_points()?;
    let solver = hopf_solver(cfg)?;
    let psi = solver.psi();
    let spec = solver.interaction();
    let fd_step = cfg.solver()?.fd_step;

    let oracle = |q: &SymMatrix| psi.gradient(q);
    let lip = estimate_lipschitz(
        spec,
        &oracle,
        st.lipschitz_radius,
        st.lipschitz_samples,
        derive_seed(cfg.seed, &[tag::LIPSCHITZ]),
    )
    .check("lipschitz estimate")?;
    let t_max = short_time_horizon(lip.l_hat);
    let smooth = smoothness_report(psi, spec, t_max, &st.t_fractions, &hs, fd_step, st.fixed_point_tol, st.max_iter)
        .check("smoothness report")?;

    let mut value = CriterionBuilder::new("char_value", "tolerances.char_value", tol.char_value);
    let mut gradient = CriterionBuilder::new("char_gradient", "tolerances.char_gradient", tol.char_gradient);
    let mut residual = CriterionBuilder::new("char_residual", "tolerances.char_residual", tol.char_residual);
    let mut psd = CriterionBuilder::new("psd_iterates", "characteristics::ITERATE_PSD_TOL", ITERATE_PSD_TOL);
    let mut hj = CriterionBuilder::new("hj_residual", "tolerances.hj_residual", tol.hj_residual);
    let mut flags = CriterionBuilder::new("smoothness_flags", "characteristics::JUMP_FACTOR", 0.0);
    // Below the horizon the map contracts with factor at most 0.9.
    let max_iterations = iteration_bound(st.fixed_point_tol, 0.9);
    let mut iterations = CriterionBuilder::new("iteration_bound", "short_time.fixed_point_tol", max_iterations as f64);

    let value_columns = columns(&[
        &names(&["t", "t_fraction"]),
        &h_columns(d),
        &names(&["u", "f_hopf", "value_error"]),
        &prefixed_columns_pair(d),
        &names(&[
            "gradient_error",
            "d_t_u",
            "hj_residual",
            "second_difference",
            "flagged",
            "fixed_point_residual",
            "iterations",
            "quotient",
            "min_iterate_eigenvalue",
        ]),
    ]);
    let mut report = StudyReport::new(cfg, &[], value_columns);
    for (i, row) in smooth.rows.iter().enumerate() {
        let frac = st.t_fractions[i / hs.len()];
        let h = &hs[i % hs.len()];
        let check = format!("characteristics t={} h={:?}", row.t, h.matrix());
        let sol = u_value(psi, spec, row.t, h, st.fixed_point_tol, st.max_iter).check(&check)?;
        let f = solver.hopf(row.t, h).check(&check)?.value;
        let gz = psi.gradient(&sol.z).check(&check)?;
        let mut pass = value.check((row.u - f).abs());
        let grad_err = (row.grad_u - gz).norm();
        pass &= gradient.check(grad_err);
        pass &= residual.check(sol.residual);
        pass &= psd.check_bool(sol.min_iterate_eigenvalue >= -ITERATE_PSD_TOL, -sol.min_iterate_eigenvalue);
        pass &= hj.check(row.hj_residual);
        pass &= flags.check_bool(!row.flagged, f64::from(u8::from(row.flagged)));
        pass &= iterations.check(sol.iterations as f64);
        let mut v = vec![row.t, frac];
        v.extend(tri(h.matrix()));
        v.extend([row.u, f, (row.u - f).abs()]);
        v.extend(tri(&row.grad_u));
        v.extend(tri(&gz));
        v.extend([
            grad_err,
            row.d_t_u,
            row.hj_residual,
            row.second_difference.unwrap_or(f64::NAN),
            f64::from(u8::from(row.flagged)),
            sol.residual,
            sol.iterations as f64,
            sol.quotient,
            sol.min_iterate_eigenvalue,
        ]);
        report.push_row(Vec::new(), v, pass);
    }
    flags.note(format!("{} cells flagged", smooth.flags));
    report.metric("l_hat", lip.l_hat);
    report.metric("t_max", t_max);
    report.metric("max_second_difference", smooth.max_second_difference);
    report.criteria = vec![
        value.finish(),
        gradient.finish(),
        residual.finish(),
        psd.finish(),
        hj.finish(),
        flags.finish(),
        iterations.finish(),
    ];
    Ok(report)
}

fn prefixed_columns_pair(d: usize) -> Vec<String> {
    let mut c = super::prefixed_columns("grad_u", d);
    c.extend(super::prefixed_columns("grad_psi_z", d));
    c
}

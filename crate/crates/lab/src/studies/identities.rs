//! Exact finite-N identities: per-sample gradient identity, Nishimori pairs,
//! derivative formulas, MMSE relations and the values at the origin.

use hjcone::model::{
    gibbs_exact, tensor_second_moment, Averaging, ConfigSpace, DisorderSample, GibbsSummary,
    QuadratureScheme, Truth,
};
use hjcone::symcone::{basis, ConePoint, SymMatrix};
use hjcone::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{columns, combined, derive_seed, h_columns, names, tag, tri};
use crate::config::{ExperimentConfig, Mode};
use crate::error::{CheckContext, LabError, Result};
use crate::report::{CriterionBuilder, StudyReport};

/// Relative errors are taken against `max(|reference|, REL_FLOOR)`.
pub const REL_FLOOR: f64 = 1e-2;

struct Point<'a> {
    n: usize,
    t: f64,
    h: &'a ConePoint,
}

#[allow(clippy::too_many_arguments)]
fn row(report: &mut StudyReport, check: &str, quantity: String, p: &Point, lhs: f64, rhs: f64, se: f64, err: f64, bound: f64, pass: bool) {
    let mut v = vec![p.n as f64, p.t];
    v.extend(tri(p.h.matrix()));
    v.extend([lhs, rhs, se, err, bound]);
    report.push_row(vec![check.to_string(), quantity], v, pass);
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / rhs.abs().max(REL_FLOOR)
}

pub fn run_identities(cfg: &ExperimentConfig) -> Result<StudyReport> {
    let ic = cfg
        .identities
        .as_ref()
        .ok_or_else(|| LabError::Config("identities study needs [identities]".into()))?;
    let tol = &cfg.tolerances;
    let d = cfg.d();
    let hs = cfg.h_points()?;
    let value_columns = columns(&[
        &names(&["N", "t"]),
        &h_columns(d),
        &names(&["lhs", "rhs", "std_error", "error", "bound"]),
    ]);
    let mut report = StudyReport::new(cfg, &["check", "quantity"], value_columns);
    let mut gibbs = CriterionBuilder::new("gibbs_identity", "tolerances.gibbs_identity", tol.gibbs_identity);
    let mut nishimori = CriterionBuilder::new("nishimori", "tolerances.nishimori", tol.nishimori);
    let mut derivative = CriterionBuilder::new("derivative_formulas", "tolerances.derivative", tol.derivative);
    let mut mmse = CriterionBuilder::new("mmse_identities", "tolerances.mmse", tol.mmse);
    let mut trivial = CriterionBuilder::new("origin_values", "tolerances.trivial", tol.trivial);
    let directions = basis(d)?;
    let mc = cfg.averaging()?.mode == Mode::Mc;
    let sigmas = if mc { tol.mc_sigmas } else { 0.0 };

    // <L> against central differences of F_N, disorder draw by disorder draw.
    for &n in &cfg.n_list {
        let check = format!("gibbs_identity N={n}");
        let space = ConfigSpace::new(&cfg.instance.model(n)?).check(&check)?;
        for &t in &cfg.t_grid {
            for h in &hs {
                let step = ic.gibbs_step;
                if h.interior_margin() <= step {
                    return Err(LabError::Check {
                        check,
                        source: Error::Domain(format!(
                            "the gradient identity needs h strictly inside the cone by more than the step {step}"
                        )),
                    });
                }
                for s in 0..ic.gibbs_samples {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag::GIBBS, n as u64, s as u64]));
                    let dis = DisorderSample::draw(space.spec(), &mut rng).check(&check)?;
                    let truth = Truth {
                        index: dis.truth,
                        x: &dis.x,
                        z: &dis.z,
                    };
                    let l = gibbs_exact(&space, t, h, &dis).check(&check)?.l_mean(h, &truth).check(&check)?;
                    for (k, e) in directions.iter().enumerate() {
                        let f = |sign: f64| -> Result<f64> {
                            let shifted = ConePoint::new(*h.matrix() + *e * (sign * step)).check(&check)?;
                            Ok(gibbs_exact(&space, t, &shifted, &dis).check(&check)?.f_n)
                        };
                        let fd = (f(1.0)? - f(-1.0)?) / (2.0 * step);
                        let lhs = l.inner(e)?;
                        let err = rel(lhs, fd);
                        let pass = gibbs.check(err);
                        row(
                            &mut report,
                            "gibbs_identity",
                            format!("sample={s} direction={k}"),
                            &Point { n, t, h },
                            lhs,
                            fd,
                            0.0,
                            err,
                            tol.gibbs_identity,
                            pass,
                        );
                    }
                }
            }
        }
    }

    for &n in &ic.quadrature_n_list {
        let space = ConfigSpace::new(&cfg.instance.model(n)?).check(&format!("origin_values N={n}"))?;
        origin_rows(cfg, &space, &mut trivial, &mut report)?;
        let averaging = super::averaging_for(cfg, n)?;
        let derivative_averaging = match averaging {
            Averaging::Quadrature { scheme, .. } => Averaging::quadrature(ic.derivative_nodes, scheme),
            mc => mc,
        };
        for &t in &cfg.t_grid {
            for h in &hs {
                let p = Point { n, t, h };
                nishimori_rows(&space, &averaging, &p, tol.nishimori, sigmas, &mut nishimori, &mut report)?;
                derivative_rows(
                    &space,
                    &derivative_averaging,
                    &p,
                    ic.derivative_step,
                    (tol.derivative, tol.mmse, sigmas),
                    (&mut derivative, &mut mmse),
                    &mut report,
                )?;
            }
        }
    }
    if mc {
        for c in [&mut nishimori, &mut derivative, &mut mmse] {
            c.note(format!("Monte Carlo bounds add {} standard errors", tol.mc_sigmas));
        }
    }
    report.criteria = vec![gibbs.finish(), nishimori.finish(), derivative.finish(), mmse.finish(), trivial.finish()];
    Ok(report)
}

/// `F_N = 0`, `E<Q> = mu mu^T` and `MMSE_N = E[X_1^T X_1] - mu mu^T` at `t = 0, h = 0`.
fn origin_rows(
    cfg: &ExperimentConfig,
    space: &ConfigSpace,
    crit: &mut CriterionBuilder,
    report: &mut StudyReport,
) -> Result<()> {
    let n = space.spec().n;
    let d = cfg.d();
    let check = format!("origin_values N={n}");
    let origin = ConePoint::zero(d);
    // No Gaussian coordinates at the origin, so this is an exact prior sum.
    let av = Averaging::quadrature(1, QuadratureScheme::Noise);
    let est = hjcone::model::quenched(space, 0.0, &origin, &av, |s: &GibbsSummary, truth: &Truth| {
        let mut v = vec![s.f_n];
        v.extend(s.overlap_mean(truth));
        Ok(v)
    })
    .check(&check)?;
    let mmse = hjcone::model::mmse_matrix(space, 0.0, &origin, &av).check(&check)?;
    let mu = cfg.instance.prior.mean();
    let second = cfg.instance.prior.second_moment();
    let p = Point { n, t: 0.0, h: &origin };
    let mut push = |quantity: String, lhs: f64, rhs: f64, report: &mut StudyReport| {
        let err = (lhs - rhs).abs();
        let pass = crit.check(err);
        row(report, "origin_values", quantity, &p, lhs, rhs, 0.0, err, cfg.tolerances.trivial, pass);
    };
    push("F".into(), est.value[0], 0.0, report);
    for a in 0..d {
        for b in 0..d {
            push(format!("E<Q>[{a},{b}]"), est.value[1 + a * d + b], mu[a] * mu[b], report);
        }
    }
    let mut k = 0;
    for a in 0..d {
        for b in a..d {
            push(format!("MMSE[{a},{b}]"), mmse.value[k], second.get(a, b) - mu[a] * mu[b], report);
            k += 1;
        }
    }
    Ok(())
}

fn nishimori_rows(
    space: &ConfigSpace,
    averaging: &Averaging,
    p: &Point,
    tol: f64,
    sigmas: f64,
    crit: &mut CriterionBuilder,
    report: &mut StudyReport,
) -> Result<()> {
    let d = space.spec().d();
    let dd = d * d;
    let mut pairs: Vec<(String, usize, usize)> = (0..dd)
        .map(|k| (format!("Q[{},{}] vs R", k / d, k % d), k, dd + k))
        .collect();
    for (i, name) in ["|Q|^2 vs |R|^2", "Q.R' vs R.R'", "Q.Q' vs R.R' shared"].iter().enumerate() {
        pairs.push((name.to_string(), 2 * dd + 2 * i, 2 * dd + 2 * i + 1));
    }
    let (v, se) = combined(
        space,
        averaging,
        &[(p.t, p.h.clone())],
        |s: &GibbsSummary, truth: &Truth| Ok(s.nishimori_terms(truth).to_vec()),
        |parts| {
            pairs
                .iter()
                .flat_map(|(_, a, b)| [parts[0][*a], parts[0][*b], parts[0][*a] - parts[0][*b]])
                .collect()
        },
        &format!("nishimori N={}", p.n),
    )?;
    for (i, (name, _, _)) in pairs.iter().enumerate() {
        let (lhs, rhs, diff, se) = (v[3 * i], v[3 * i + 1], v[3 * i + 2], se[3 * i + 2]);
        let bound = tol + sigmas * se;
        let pass = crit.check_against(diff.abs(), bound);
        row(report, "nishimori", name.clone(), p, lhs, rhs, se, diff.abs(), bound, pass);
    }
    Ok(())
}

/// Central differences of the quenched free energy against the derivative
/// formulas, and the MMSE relations built on the same differences.
fn derivative_rows(
    space: &ConfigSpace,
    averaging: &Averaging,
    p: &Point,
    step: f64,
    (tol_der, tol_mmse, sigmas): (f64, f64, f64),
    (der, mmse): (&mut CriterionBuilder, &mut CriterionBuilder),
    report: &mut StudyReport,
) -> Result<()> {
    let spec = space.spec();
    let (n, d) = (spec.n, spec.d());
    let check = format!("derivative_formulas N={n}");
    let directions = basis(d)?;
    let h = p.h.matrix();
    if p.h.interior_margin() <= step {
        return Err(LabError::Check {
            check,
            source: Error::Domain(format!(
                "differences in h need h strictly inside the cone by more than the step {step}"
            )),
        });
    }
    // Point 0 is the centre; then t+, t- (or the centre again for a forward
    // difference at small t), then h +- step e_k.
    let central_t = p.t >= step;
    let mut points = vec![(p.t, p.h.clone()), (p.t + step, p.h.clone())];
    points.push(if central_t { (p.t - step, p.h.clone()) } else { (p.t, p.h.clone()) });
    for e in &directions {
        points.push((p.t, ConePoint::new(*h + *e * step).check(&check)?));
        points.push((p.t, ConePoint::new(*h - *e * step).check(&check)?));
    }
    let scale = 1.0 / (n as f64).powi(spec.interaction.p() as i32);
    let m2 = tensor_second_moment(space);
    let second = spec.prior.second_moment();
    let nb = directions.len();
    let estimator = |s: &GibbsSummary, truth: &Truth| -> hjcone::Result<Vec<f64>> {
        let mut v = vec![s.f_n, scale * s.tensor_mean_sq()];
        v.extend(s.replica_overlap_mean().upper_triangle());
        // (1/N) (X - <x>)^T (X - <x>), upper triangle.
        let err: Vec<f64> = truth.x.iter().zip(&s.mean_x).map(|(a, b)| a - b).collect();
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
    };
    let dt_denominator = if central_t { 2.0 * step } else { step };
    let (v, se) = combined(
        space,
        averaging,
        &points,
        estimator,
        |parts| {
            let c = parts[0];
            let mut out = Vec::new();
            let mut triple = |lhs: f64, rhs: f64| out.extend([lhs, rhs, lhs - rhs]);
            let dt = (parts[1][0] - parts[2][0]) / dt_denominator;
            triple(dt, c[1]);
            let mut fd = Vec::with_capacity(nb);
            for (k, e) in directions.iter().enumerate() {
                let g = (parts[3 + 2 * k][0] - parts[4 + 2 * k][0]) / (2.0 * step);
                fd.push(g);
                let overlap = SymMatrix::symmetrize(d, &full_from_tri(d, &c[2..2 + nb])).expect("square");
                triple(g, overlap.inner(e).expect("same dimension"));
            }
            for (k, e) in directions.iter().enumerate() {
                // grad entry (a, b) is the directional derivative over <e, e>.
                let (a, b) = tri_index(d, k);
                let grad = fd[k] / e.inner(e).expect("same dimension");
                triple(c[2 + nb + k], second.get(a, b) - grad);
            }
            triple(c[2 + 2 * nb], m2 - dt);
            out
        },
        &check,
    )?;
    let at = |i: usize| (v[3 * i], v[3 * i + 1], v[3 * i + 2], se[3 * i + 2]);
    let record = |report: &mut StudyReport, crit: &mut CriterionBuilder, check: &str, name: String, i: usize, relative: bool, tol: f64| {
        let (lhs, rhs, diff, se) = at(i);
        let (err, bound) = if relative {
            let s = rhs.abs().max(REL_FLOOR);
            (diff.abs() / s, tol + sigmas * se / s)
        } else {
            (diff.abs(), tol + sigmas * se)
        };
        let pass = crit.check_against(err, bound);
        row(report, check, name, p, lhs, rhs, se, err, bound, pass);
    };
    let t_kind = if central_t { "central" } else { "forward" };
    record(report, der, "derivative_formulas", format!("d_t F vs N^-p E|<x^p A>|^2 ({t_kind})"), 0, true, tol_der);
    for k in 0..nb {
        let (a, b) = tri_index(d, k);
        record(report, der, "derivative_formulas", format!("grad_h F[{a},{b}] vs E<x>^T<x>/N"), 1 + k, true, tol_der);
    }
    for k in 0..nb {
        let (a, b) = tri_index(d, k);
        record(report, mmse, "mmse_identities", format!("MMSE[{a},{b}] vs E[X_1^T X_1] - grad_h F"), 1 + nb + k, false, tol_mmse);
    }
    record(report, mmse, "mmse_identities", "mmse vs N^-p E|X^p A|^2 - d_t F".into(), 1 + 2 * nb, false, tol_mmse);
    Ok(())
}

fn tri_index(d: usize, k: usize) -> (usize, usize) {
    let mut idx = 0;
    for a in 0..d {
        for b in a..d {
            if idx == k {
                return (a, b);
            }
            idx += 1;
        }
    }
    unreachable!("index {k} outside the upper triangle of a {d}x{d} matrix")
}

fn full_from_tri(d: usize, t: &[f64]) -> Vec<f64> {
    let mut full = vec![0.0; d * d];
    let mut k = 0;
    for a in 0..d {
        for b in a..d {
            full[a * d + b] = t[k];
            full[b * d + a] = t[k];
            k += 1;
        }
    }
    full
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_helpers() {
        assert_eq!(tri_index(3, 0), (0, 0));
        assert_eq!(tri_index(3, 3), (1, 1));
        assert_eq!(tri_index(3, 5), (2, 2));
        assert_eq!(full_from_tri(2, &[1.0, 2.0, 3.0]), vec![1.0, 2.0, 2.0, 3.0]);
    }
}

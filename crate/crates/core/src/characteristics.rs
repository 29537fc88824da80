//! Short-time classical solution of `d_t f = H(grad_h f)` by characteristics.
//!
//! Characteristics emitted from `h` are the straight lines `X(t, h) = h - t grad H(grad psi(h))`.
//! While `t L < 1`, with `L` a Lipschitz constant of `h -> grad H(grad psi(h))`, the
//! map `X(t, .)` is inverted by the contraction `h <- k + t grad H(grad psi(h))`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nonlinearity::{h_grad, h_value, InteractionSpec};
use crate::symcone::{ConePoint, SymMatrix};
use crate::variational::ConeFunction;

/// Eigenvalue below which a computed `grad psi` is reported instead of projected.
pub const PSI_GRAD_PSD_TOL: f64 = 1e-8;
/// Eigenvalue below which a fixed-point iterate counts as leaving the cone.
pub const ITERATE_PSD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct CharSolution {
    pub t: f64,
    pub h: SymMatrix,
    /// `Z(t, h)`, the foot of the characteristic through `h`.
    pub z: SymMatrix,
    /// `u(t, h)`; filled by [`u_value`].
    pub u: Option<f64>,
    /// Evaluations of the fixed-point map.
    pub iterations: usize,
    /// `|X(t, z) - h|`.
    pub residual: f64,
    /// Largest observed ratio of successive residuals.
    pub quotient: f64,
    /// Smallest eigenvalue over all iterates.
    pub min_iterate_eigenvalue: f64,
}

fn checked_grad(psi: &dyn ConeFunction, h: &SymMatrix) -> Result<SymMatrix> {
    let g = psi.gradient(h)?;
    let low = g.min_eigenvalue()?;
    if low < -PSI_GRAD_PSD_TOL {
        return Err(Error::Numeric(format!(
            "grad psi at {h:?} has eigenvalue {low:e}; it must be PSD"
        )));
    }
    Ok(g)
}

fn check(psi: &dyn ConeFunction, spec: &InteractionSpec, t: f64, dim: usize) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be finite and nonnegative, got {t}")));
    }
    if psi.dim() != spec.d() || dim != spec.d() {
        return Err(Error::Dimension(format!(
            "psi acts on D = {}, H on D = {}, point has D = {dim}",
            psi.dim(),
            spec.d()
        )));
    }
    Ok(())
}

/// `X(t, h) = h - t grad H(grad psi(h))`.
pub fn char_forward(
    psi: &dyn ConeFunction,
    spec: &InteractionSpec,
    t: f64,
    h: &ConePoint,
) -> Result<SymMatrix> {
    check(psi, spec, t, h.dim())?;
    if t == 0.0 {
        return Ok(*h.matrix());
    }
    let g = checked_grad(psi, h.matrix())?;
    Ok(*h.matrix() - h_grad(spec, &g)? * t)
}

/// Solves `X(t, z) = k` by iterating `z <- k + t grad H(grad psi(z))` from `z = k`.
pub fn char_invert(
    psi: &dyn ConeFunction,
    spec: &InteractionSpec,
    t: f64,
    k: &ConePoint,
    tol: f64,
    max_iter: usize,
) -> Result<CharSolution> {
    check(psi, spec, t, k.dim())?;
    let km = *k.matrix();
    let phi = |z: &SymMatrix| -> Result<SymMatrix> {
        if t == 0.0 {
            return Ok(km);
        }
        Ok(km + h_grad(spec, &checked_grad(psi, z)?)? * t)
    };
    let mut z = km;
    let mut next = phi(&z)?;
    let mut iterations = 1;
    let mut residual = (z - next).norm();
    let mut quotient: f64 = 0.0;
    let mut min_eig = z.min_eigenvalue()?;
    while residual > tol {
        if iterations >= max_iter {
            return Err(Error::NonContraction {
                iterations,
                quotient,
            });
        }
        z = next;
        let low = z.min_eigenvalue()?;
        min_eig = min_eig.min(low);
        if low < -ITERATE_PSD_TOL {
            return Err(Error::Numeric(format!(
                "fixed-point iterate {iterations} left the cone (eigenvalue {low:e})"
            )));
        }
        next = phi(&z)?;
        iterations += 1;
        let r = (z - next).norm();
        if residual > 0.0 {
            quotient = quotient.max(r / residual);
        }
        residual = r;
    }
    Ok(CharSolution {
        t,
        h: km,
        z,
        u: None,
        iterations,
        residual,
        quotient,
        min_iterate_eigenvalue: min_eig,
    })
}

/// `u(t, h) = psi(z) - t inner(grad H(g), g) + t H(g)` with `z = Z(t, h)` and `g = grad psi(z)`.
pub fn u_value(
    psi: &dyn ConeFunction,
    spec: &InteractionSpec,
    t: f64,
    h: &ConePoint,
    tol: f64,
    max_iter: usize,
) -> Result<CharSolution> {
    let mut sol = char_invert(psi, spec, t, h, tol, max_iter)?;
    let z = ConePoint::new(sol.z)?;
    let (pv, g) = psi.value_and_gradient(z.matrix())?;
    let u = pv - t * h_grad(spec, &g)?.dot(&g) + t * h_value(spec, &g)?;
    sol.u = Some(u);
    Ok(sol)
}

/// `u`, `grad_h u` and `d_t u` by central differences of [`u_value`] (one-sided
/// at `t < step` and where the backward point leaves the cone).
#[derive(Clone, Debug, Serialize)]
pub struct UDerivatives {
    pub solution: CharSolution,
    pub grad_h: SymMatrix,
    pub d_t: f64,
}

pub fn u_derivatives(
    psi: &dyn ConeFunction,
    spec: &InteractionSpec,
    t: f64,
    h: &ConePoint,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<UDerivatives> {
    let u = |t: f64, h: &ConePoint| -> Result<f64> {
        Ok(u_value(psi, spec, t, h, tol, max_iter)?.u.expect("u_value fills u"))
    };
    let solution = u_value(psi, spec, t, h, tol, max_iter)?;
    let u0 = solution.u.expect("u_value fills u");
    let mut grad_h = SymMatrix::zeros(h.dim());
    for e in crate::symcone::basis(h.dim())? {
        let up = u(t, &ConePoint::new(*h.matrix() + e * step)?)?;
        let slope = match ConePoint::new(*h.matrix() - e * step) {
            Ok(back) => (up - u(t, &back)?) / (2.0 * step),
            Err(_) => (up - u0) / step,
        };
        grad_h += e * (slope / e.dot(&e));
    }
    let up = u(t + step, h)?;
    let d_t = if t >= step {
        (up - u(t - step, h)?) / (2.0 * step)
    } else {
        (up - u0) / step
    };
    Ok(UDerivatives {
        solution,
        grad_h,
        d_t,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessRow {
    pub t: f64,
    pub h: SymMatrix,
    pub u: f64,
    pub grad_u: SymMatrix,
    pub d_t_u: f64,
    /// `|d_t u - H(grad u)|`.
    pub hj_residual: f64,
    /// Second difference of `u` along the `h` path at this point, when interior.
    pub second_difference: Option<f64>,
    /// The second difference jumped by more than [`JUMP_FACTOR`] from the previous cell.
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    pub t_max: f64,
    pub rows: Vec<SmoothnessRow>,
    pub max_hj_residual: f64,
    pub max_second_difference: f64,
    pub flags: usize,
}

/// A jump between adjacent second differences above this factor is flagged.
pub const JUMP_FACTOR: f64 = 10.0;
/// Second differences below this are treated as rounding noise when comparing.
pub const SECOND_DIFFERENCE_FLOOR: f64 = 1e-9;

/// Tabulates `u` on `t_fractions * t_max` times the `h` path, with the HJ residual
/// and second differences of `u` along the path.
#[allow(clippy::too_many_arguments)]
pub fn smoothness_report(
    psi: &dyn ConeFunction,
    spec: &InteractionSpec,
    t_max: f64,
    t_fractions: &[f64],
    h_path: &[ConePoint],
    fd_step: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SmoothnessReport> {
    let mut rows = Vec::with_capacity(t_fractions.len() * h_path.len());
    for &frac in t_fractions {
        let t = frac * t_max;
        let mut block: Vec<SmoothnessRow> = h_path
            .iter()
            .map(|h| {
                let der = u_derivatives(psi, spec, t, h, fd_step, tol, max_iter)?;
                let hj = (der.d_t - h_value(spec, &der.grad_h)?).abs();
                Ok(SmoothnessRow {
                    t,
                    h: *h.matrix(),
                    u: der.solution.u.expect("u_value fills u"),
                    grad_u: der.grad_h,
                    d_t_u: der.d_t,
                    hj_residual: hj,
                    second_difference: None,
                    flagged: false,
                })
            })
            .collect::<Result<_>>()?;
        let mut previous: Option<f64> = None;
        for i in 1..block.len().saturating_sub(1) {
            let d2 = block[i + 1].u - 2.0 * block[i].u + block[i - 1].u;
            block[i].second_difference = Some(d2);
            if let Some(p) = previous {
                let a = d2.abs().max(SECOND_DIFFERENCE_FLOOR);
                let b = p.abs().max(SECOND_DIFFERENCE_FLOOR);
                block[i].flagged = a > JUMP_FACTOR * b || b > JUMP_FACTOR * a;
            }
            previous = Some(d2);
        }
        rows.extend(block);
    }
    let max_hj_residual = rows.iter().map(|r| r.hj_residual).fold(0.0, f64::max);
    let max_second_difference = rows
        .iter()
        .filter_map(|r| r.second_difference)
        .map(f64::abs)
        .fold(0.0, f64::max);
    let flags = rows.iter().filter(|r| r.flagged).count();
    Ok(SmoothnessReport {
        t_max,
        rows,
        max_hj_residual,
        max_second_difference,
        flags,
    })
}

/// Short-time horizon `0.9 / (1.1 L_hat)`: the sampled Lipschitz estimate is a
/// lower bound, so it is inflated by 10% before the safety margin.
pub fn short_time_horizon(l_hat: f64) -> f64 {
    0.9 / (1.1 * l_hat)
}

//! The studies. Each builds one [`StudyReport`] from a validated config.

mod concentration;
mod convergence;
mod identities;
mod mmse;
mod short_time;
mod variational;

pub use concentration::run_concentration;
pub use convergence::run_convergence;
pub use identities::run_identities;
pub use mmse::run_mmse;
pub use short_time::run_short_time;
pub use variational::run_variational;

use std::time::Instant;

use hjcone::model::{jackknife, monte_carlo_replicas, quenched, Averaging, ConfigSpace, GibbsSummary, PsiOracle, Truth};
use hjcone::symcone::{ConePoint, SymMatrix};
use hjcone::variational::{HopfSolver, SolverOptions};

use crate::config::{ExperimentConfig, Mode, Study};
use crate::error::{CheckContext, Result};
use crate::report::StudyReport;

/// Validates `cfg` and runs its study.
pub fn run(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mut report = match cfg.study {
        Study::Identities => run_identities(cfg),
        Study::Convergence => run_convergence(cfg),
        Study::Concentration => run_concentration(cfg),
        Study::Mmse => run_mmse(cfg),
        Study::ShortTime => run_short_time(cfg),
        Study::VariationalGrid => run_variational(cfg),
    }?;
    report.wall_clock = start.elapsed();
    Ok(report)
}

/// Mixes `tags` into `base` (SplitMix64 finalizer) so that sub-streams of a run never overlap.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = base;
    for &t in tags {
        s = s.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(t);
        let mut z = s;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        s = z ^ (z >> 31);
    }
    s
}

/// Seed tags of the random streams, one per purpose.
pub(crate) mod tag {
    pub const GIBBS: u64 = 1;
    pub const DISORDER: u64 = 2;
    pub const SOLVER: u64 = 3;
    pub const LIPSCHITZ: u64 = 4;
}

pub(crate) fn h_columns(d: usize) -> Vec<String> {
    prefixed_columns("h", d)
}

/// `name_ij` for the upper triangle.
pub(crate) fn prefixed_columns(name: &str, d: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in i..d {
            out.push(format!("{name}_{}{}", i + 1, j + 1));
        }
    }
    out
}

/// `name_ij` for a full `D x D` array.
pub(crate) fn full_columns(name: &str, d: usize) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            out.push(format!("{name}_{}{}", i + 1, j + 1));
        }
    }
    out
}

pub(crate) fn columns(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

pub(crate) fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Disorder averaging for model `n` of the study; Monte Carlo streams
/// depend on `n` but not on `(t, h)`, so grid neighbours share disorder.
pub(crate) fn averaging_for(cfg: &ExperimentConfig, n: usize) -> Result<Averaging> {
    let av = cfg.averaging()?;
    Ok(match av.mode {
        Mode::Quadrature => Averaging::quadrature(av.nodes, av.scheme),
        Mode::Mc => Averaging::monte_carlo(av.budget, derive_seed(cfg.seed, &[tag::DISORDER, n as u64])),
    })
}

pub(crate) fn hopf_solver(cfg: &ExperimentConfig) -> Result<HopfSolver<PsiOracle>> {
    let s = cfg.solver()?;
    let psi = PsiOracle::new(&cfg.instance.prior, s.psi_nodes)?;
    Ok(HopfSolver::new(
        psi,
        cfg.instance.interaction.clone(),
        SolverOptions {
            starts: s.starts,
            seed: derive_seed(cfg.seed, &[tag::SOLVER]),
            tol: s.tol,
            max_iter: s.max_iter,
        },
    )?)
}

/// Averages an estimator at several `(t, h)` points and combines the
/// per-point averages with `f`.
///
/// In Monte Carlo mode every point sees the same disorder draws, and the
/// standard error is a jackknife of `f` over draws, so differences between
/// points carry their correlated error correctly.
pub(crate) fn combined<E, F>(
    space: &ConfigSpace,
    averaging: &Averaging,
    points: &[(f64, ConePoint)],
    estimator: E,
    f: F,
    check: &str,
) -> Result<(Vec<f64>, Vec<f64>)>
where
    E: Fn(&GibbsSummary, &Truth) -> hjcone::Result<Vec<f64>> + Sync,
    F: Fn(&[&[f64]]) -> Vec<f64>,
{
    match *averaging {
        Averaging::Quadrature { .. } => {
            let vals = points
                .iter()
                .map(|(t, h)| Ok(quenched(space, *t, h, averaging, &estimator).check(check)?.value))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&[f64]> = vals.iter().map(Vec::as_slice).collect();
            let v = f(&refs);
            let zeros = vec![0.0; v.len()];
            Ok((v, zeros))
        }
        Averaging::MonteCarlo { budget, seed } => {
            let reps = points
                .iter()
                .map(|(t, h)| monte_carlo_replicas(space, *t, h, budget, seed, &estimator).check(check))
                .collect::<Result<Vec<_>>>()?;
            let widths: Vec<usize> = reps.iter().map(|r| r[0].len()).collect();
            let joined: Vec<Vec<f64>> = (0..budget)
                .map(|r| reps.iter().flat_map(|p| p[r].iter().copied()).collect())
                .collect();
            Ok(jackknife(&joined, |mean| {
                let mut parts = Vec::with_capacity(widths.len());
                let mut at = 0;
                for w in &widths {
                    parts.push(&mean[at..at + w]);
                    at += w;
                }
                f(&parts)
            }))
        }
    }
}

/// Frobenius norm of a difference of upper triangles.
pub(crate) fn tri_distance(d: usize, a: &[f64], b: &[f64]) -> f64 {
    let mut k = 0;
    let mut total = 0.0;
    for i in 0..d {
        for j in i..d {
            let w = if i == j { 1.0 } else { 2.0 };
            total += w * (a[k] - b[k]).powi(2);
            k += 1;
        }
    }
    total.sqrt()
}

pub(crate) fn tri(m: &SymMatrix) -> Vec<f64> {
    m.upper_triangle()
}

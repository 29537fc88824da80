//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Each criterion is held to its stated tolerance and wall-clock budget.
//! Studies shared by several criteria run once; their time counts against
//! each criterion that reads them.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hjcone::nonlinearity::{h_grad, h_value, InteractionSpec};
use hjcone::symcone::{basis, dsqrt, sqrt_psd, wishart, ConePoint, SymMatrix};
use hjlab::config::{ExperimentConfig, Instance, Mode, Study};
use hjlab::report::StudyReport;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    id: usize,
    title: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn study(cfg: ExperimentConfig) -> (Result<StudyReport, String>, Duration) {
    timed(|| hjlab::run(&cfg).map_err(|e| e.to_string()))
}

/// Passes when every named criterion of `report` passed.
fn from_report(
    id: usize,
    title: &'static str,
    report: &Result<StudyReport, String>,
    names: &[&str],
    elapsed: Duration,
    budget: Duration,
) -> Outcome {
    let (passed, detail) = match report {
        Err(e) => (false, format!("error: {e}")),
        Ok(r) => {
            let mut ok = true;
            let mut parts = Vec::new();
            for name in names {
                match r.criterion(name) {
                    Some(c) => {
                        ok &= c.passed && c.checked > 0;
                        parts.push(format!(
                            "{} measured {:.3e} vs {:.1e} on {} points",
                            c.name, c.measured, c.tolerance, c.checked
                        ));
                    }
                    None => {
                        ok = false;
                        parts.push(format!("{name} missing"));
                    }
                }
            }
            (ok, parts.join("; "))
        }
    };
    Outcome {
        id,
        title,
        passed: passed && elapsed <= budget,
        detail,
        elapsed,
        budget,
    }
}

fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

/// Kernel checks on 100 random inputs each.
fn kernels() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut sylvester, mut round_trip, mut grad_rel) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let h = wishart(d, &mut rng) + SymMatrix::identity(d) * 0.05;
        let point = ConePoint::new(h).unwrap();
        let root = sqrt_psd(&point).unwrap();
        let s = *root.matrix();
        round_trip = round_trip.max((s.square() - h).norm());
        let a = SymMatrix::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let a = (a + SymMatrix::from_fn(d, |i, j| a.get(j, i))) * 0.5;
        let m = dsqrt(&point, &a).unwrap();
        sylvester = sylvester.max((m.anticommutator(&s).unwrap() - a).norm());
    }
    for _ in 0..100 {
        let d: usize = rng.random_range(1..=3);
        let p: u32 = rng.random_range(1..=3);
        let cols = rng.random_range(1..=3);
        let rows: Vec<Vec<f64>> = (0..d.pow(p))
            .map(|_| (0..cols).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let spec = InteractionSpec::new(d, p as usize, &rows).unwrap();
        let q = wishart(d, &mut rng);
        let grad = h_grad(&spec, &q).unwrap();
        let step = 1e-5;
        let mut fd = SymMatrix::zeros(d);
        for e in basis(d).unwrap() {
            let slope = (h_value(&spec, &(q + e * step)).unwrap() - h_value(&spec, &(q - e * step)).unwrap())
                / (2.0 * step);
            fd = fd + e * (slope / e.inner(&e).unwrap());
        }
        grad_rel = grad_rel.max((fd - grad).norm() / grad.norm().max(f64::MIN_POSITIVE));
    }
    let ok = sylvester < 1e-10 && round_trip < 1e-10 && grad_rel < 1e-6;
    (
        ok,
        format!(
            "dsqrt Sylvester residual {sylvester:.3e} (< 1e-10); sqrt round trip {round_trip:.3e} (< 1e-10); \
             h_grad relative error {grad_rel:.3e} (< 1e-6)"
        ),
    )
}

fn main() -> ExitCode {
    let reference = Instance::reference;
    let mut outcomes = Vec::new();

    let (identities, t_id) = study(ExperimentConfig::defaults(Study::Identities, reference()));
    let rows: [(usize, &str, &str, u64); 4] = [
        (1, "exact Gibbs identity per disorder sample", "gibbs_identity", 0),
        (2, "Nishimori identities", "nishimori", 2),
        (3, "derivative formulas of the quenched free energy", "derivative_formulas", 2),
        (4, "finite-N MMSE identities", "mmse_identities", 2),
    ];
    for (id, title, name, m) in rows {
        let budget = if m == 0 { Duration::from_secs(10) } else { minutes(m) };
        outcomes.push(from_report(id, title, &identities, &[name], t_id, budget));
    }

    let (variational, t_var) = study(ExperimentConfig::defaults(Study::VariationalGrid, reference()));
    outcomes.push(from_report(
        5,
        "Hopf initial condition and Hopf / Hopf-Lax agreement",
        &variational,
        &["psi_match", "formula_agreement"],
        t_var,
        minutes(1),
    ));
    outcomes.push(from_report(
        6,
        "HJ residual at screened points",
        &variational,
        &["hj_residual"],
        t_var,
        minutes(1),
    ));

    let (short_time, t_st) = study(ExperimentConfig::defaults(Study::ShortTime, reference()));
    outcomes.push(from_report(
        7,
        "characteristics against the Hopf value below the horizon",
        &short_time,
        &["char_value", "char_gradient", "char_residual", "psd_iterates"],
        t_st,
        minutes(1),
    ));
    outcomes.push(from_report(
        8,
        "maximizer diagnostics at screened points",
        &variational,
        &["maximizer_diagnostics"],
        t_var,
        minutes(2),
    ));

    let mut cfg = ExperimentConfig::defaults(Study::Concentration, reference());
    cfg.n_list = (2..=8).collect();
    cfg.compare_n = [2, 8];
    let av = cfg.averaging.as_mut().expect("concentration averages over disorder");
    av.mode = Mode::Mc;
    av.budget = 20_000;
    let (concentration, t_conc) = study(cfg);
    let mut trend = from_report(
        9,
        "overlap concentration trend in N",
        &concentration,
        &["deviation_decay", "overlap_monotone"],
        t_conc,
        minutes(10),
    );
    if let Ok(r) = &concentration {
        let (n, dev, se) = (r.column("N"), r.column("dev_grad"), r.column("dev_grad_se"));
        if let (Some(n), Some(dev), Some(se)) = (n, dev, se) {
            for row in r.rows.iter().filter(|row| row.values[n] == 2.0 || row.values[n] == 8.0) {
                trend.detail.push_str(&format!(
                    "; E<|Q - grad f|> at N = {} is {:.4} +- {:.4}",
                    row.values[n], row.values[dev], row.values[se]
                ));
            }
        }
    }
    outcomes.push(trend);

    let ((passed, detail), t_k) = timed(kernels);
    outcomes.push(Outcome {
        id: 10,
        title: "numeric kernels",
        passed: passed && t_k <= Duration::from_secs(5),
        detail,
        elapsed: t_k,
        budget: Duration::from_secs(5),
    });

    outcomes.sort_by_key(|o| o.id);
    for o in &outcomes {
        println!(
            "{} criterion {:>2}: {} [{:.1} s of {} s] {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.id,
            o.title,
            o.elapsed.as_secs_f64(),
            o.budget.as_secs(),
            o.detail
        );
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

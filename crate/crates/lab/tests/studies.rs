//! Small, fast configurations of every study, and the artifact contract.

use hjcone::symcone::SymMatrix;
use hjlab::config::{ExperimentConfig, Format, Instance, Mode, Study};
use hjlab::report::read_json;
use hjlab::{emit, run, LabError};

fn small(study: Study) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::defaults(study, Instance::reference());
    if let Some(av) = cfg.averaging.as_mut() {
        av.budget = 300;
        av.nodes = 8;
    }
    if let Some(s) = cfg.solver.as_mut() {
        s.starts = 4;
    }
    match study {
        Study::Identities => {
            let id = cfg.identities.as_mut().unwrap();
            id.gibbs_samples = 3;
            id.quadrature_n_list = vec![1];
            cfg.n_list = vec![1, 2];
        }
        Study::Convergence | Study::Mmse => {
            cfg.n_list = vec![2, 3];
            cfg.compare_n = [2, 3];
            cfg.h_grid = vec![SymMatrix::diag(&[0.3]), SymMatrix::diag(&[0.6])];
            if study == Study::Convergence {
                cfg.t_grid = vec![0.0, 0.2];
            }
        }
        Study::Concentration => {
            cfg.n_list = vec![2, 3];
            cfg.compare_n = [2, 3];
        }
        Study::ShortTime => {
            cfg.h_grid = vec![SymMatrix::diag(&[0.3]), SymMatrix::diag(&[0.6]), SymMatrix::diag(&[0.9])];
            cfg.short_time.as_mut().unwrap().t_fractions = vec![0.2, 0.8];
        }
        Study::VariationalGrid => {
            cfg.t_grid = vec![0.0, 0.2];
            cfg.h_grid = vec![SymMatrix::diag(&[0.3]), SymMatrix::diag(&[0.6])];
        }
    }
    cfg.validate().unwrap();
    cfg
}

fn row_count(cfg: &ExperimentConfig) -> usize {
    cfg.n_list.len() * cfg.t_grid.len() * cfg.h_grid.len()
}

#[test]
fn convergence_has_one_row_per_grid_point_and_n() {
    let cfg = small(Study::Convergence);
    let report = run(&cfg).unwrap();
    assert_eq!(report.rows.len(), row_count(&cfg));
    let dir = tempfile::tempdir().unwrap();
    let paths = emit(&report, dir.path(), &[Format::Csv]).unwrap();
    let text = std::fs::read_to_string(&paths[0]).unwrap();
    assert_eq!(text.lines().count(), row_count(&cfg) + 1);
    assert!(report.passed(), "{:#?}", report.criteria);
}

#[test]
fn identities_pass_and_origin_rows_are_exact() {
    let report = run(&small(Study::Identities)).unwrap();
    assert!(report.passed(), "{:#?}", report.criteria);
    let origin = report.criterion("origin_values").unwrap();
    assert!(origin.checked > 0);
    assert!(origin.measured <= 1e-14);
}

#[test]
fn mmse_and_concentration_run_on_small_configs() {
    for study in [Study::Mmse, Study::Concentration] {
        let cfg = small(study);
        let report = run(&cfg).unwrap();
        assert_eq!(report.rows.len(), row_count(&cfg), "{study:?}");
        assert!(report.criteria.iter().all(|c| c.checked > 0), "{study:?}");
    }
}

#[test]
fn short_time_and_variational_pass() {
    for study in [Study::ShortTime, Study::VariationalGrid] {
        let report = run(&small(study)).unwrap();
        assert!(report.passed(), "{study:?}: {:#?}", report.criteria);
    }
}

#[test]
fn json_round_trip_is_bit_exact() {
    let report = run(&small(Study::VariationalGrid)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = emit(&report, dir.path(), &[Format::Json]).unwrap();
    let mut back = read_json(&paths[0]).unwrap();
    back.wall_clock = report.wall_clock;
    assert_eq!(back.rows.len(), report.rows.len());
    for (a, b) in back.rows.iter().zip(&report.rows) {
        for (x, y) in a.values.iter().zip(&b.values) {
            // Absent quantities come back as NaN.
            assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
        }
    }
    assert_eq!(back.config, report.config);
    assert_eq!(back.criteria.len(), report.criteria.len());
}

#[test]
fn identical_configs_give_identical_files() {
    let cfg = small(Study::Mmse);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = emit(&run(&cfg).unwrap(), a.path(), &cfg.output.formats).unwrap();
    let pb = emit(&run(&cfg).unwrap(), b.path(), &cfg.output.formats).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn seeds_change_monte_carlo_output() {
    let mut cfg = small(Study::Mmse);
    assert_eq!(cfg.averaging.as_ref().unwrap().mode, Mode::Mc);
    let a = run(&cfg).unwrap();
    cfg.seed += 1;
    let b = run(&cfg).unwrap();
    assert_ne!(a.rows[0].values, b.rows[0].values);
}

#[test]
fn concentration_rejects_boundary_h() {
    let mut cfg = small(Study::Concentration);
    cfg.h_grid = vec![SymMatrix::zeros(1)];
    match run(&cfg) {
        Err(LabError::Check { source: hjcone::Error::Domain(m), .. }) => assert!(m.contains("interior")),
        other => panic!("expected a domain error, got {other:?}"),
    }
}

#[test]
fn corrupted_gram_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "study = \"variational_grid\"\n\
         [instance.prior]\nsupport = [[-1.0], [1.0]]\nweights = [0.5, 0.5]\n\
         [instance.interaction]\nD = 1\np = 2\nA = [[1.0]]\ngram = [[-1.0]]\n",
    )
    .unwrap();
    let err = ExperimentConfig::load(&path, None).unwrap_err();
    assert!(matches!(err, LabError::Config(_)), "{err:?}");
    assert!(err.to_string().contains("gram"), "{err}");
}

#[test]
fn empty_grid_is_rejected() {
    let mut cfg = small(Study::Convergence);
    cfg.t_grid.clear();
    assert!(matches!(run(&cfg), Err(LabError::Config(_))));
}

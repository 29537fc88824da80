//! Experiment configuration: TOML in, fully resolved and echoed out.
//!
//! A config file only needs the keys it changes. Loading merges it over the
//! defaults for its study and instance dimension, so the echoed config in every
//! report lists each grid, budget and tolerance that was actually used.

use std::path::{Path, PathBuf};

use hjcone::model::{ModelSpec, PriorSpec, QuadratureScheme};
use hjcone::nonlinearity::InteractionSpec;
use hjcone::symcone::{ConePoint, SymMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Identities,
    Convergence,
    Concentration,
    Mmse,
    ShortTime,
    VariationalGrid,
}

impl Study {
    pub const ALL: [Study; 6] = [
        Study::Identities,
        Study::Convergence,
        Study::Concentration,
        Study::Mmse,
        Study::ShortTime,
        Study::VariationalGrid,
    ];

    /// Stable name used for output files and the serialized config.
    pub fn name(&self) -> &'static str {
        match self {
            Study::Identities => "identities",
            Study::Convergence => "convergence",
            Study::Concentration => "concentration",
            Study::Mmse => "mmse",
            Study::ShortTime => "short_time",
            Study::VariationalGrid => "variational_grid",
        }
    }

    /// Studies that evaluate finite-N models and so need `n_list` and `averaging`.
    pub fn uses_models(&self) -> bool {
        matches!(
            self,
            Study::Identities | Study::Convergence | Study::Concentration | Study::Mmse
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Quadrature,
    Mc,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Prior and interaction; `N` comes from the study's `n_list`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub prior: PriorSpec,
    pub interaction: InteractionSpec,
}

impl Instance {
    /// Rademacher prior with `H(q) = q^2`.
    pub fn reference() -> Self {
        let m = ModelSpec::reference(1);
        Instance {
            prior: m.prior,
            interaction: m.interaction,
        }
    }

    /// Product-Rademacher prior in `D = 2` with `A = vec(I)`.
    pub fn matrix_reference() -> Self {
        let m = ModelSpec::matrix_reference(1);
        Instance {
            prior: m.prior,
            interaction: m.interaction,
        }
    }

    pub fn d(&self) -> usize {
        self.prior.d()
    }

    pub fn model(&self, n: usize) -> Result<ModelSpec> {
        Ok(ModelSpec::new(self.prior.clone(), self.interaction.clone(), n)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AveragingConfig {
    pub mode: Mode,
    /// Gauss-Hermite nodes per dimension (quadrature mode).
    pub nodes: usize,
    pub scheme: QuadratureScheme,
    /// Disorder samples per N (Monte Carlo mode).
    pub budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub starts: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// Gauss-Hermite nodes per dimension for psi.
    pub psi_nodes: usize,
    /// Step of the finite differences of f.
    pub fd_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative error of <L> against differences of F_N, per disorder sample.
    pub gibbs_identity: f64,
    pub nishimori: f64,
    /// Relative error of the derivative formulas for the quenched free energy.
    pub derivative: f64,
    pub mmse: f64,
    /// Exact values at t = 0, h = 0.
    pub trivial: f64,
    /// `F_N(0, h) = psi(h)` in quadrature mode.
    pub initial_condition: f64,
    /// Midpoint convexity of F_N in h (quadrature mode).
    pub convexity: f64,
    /// Hopf at t = 0 against psi.
    pub psi_match: f64,
    /// Hopf against both Hopf-Lax forms.
    pub formula_agreement: f64,
    /// Forward and backward quotients of f must agree within this to count a point as differentiable.
    pub screen: f64,
    pub hj_residual: f64,
    /// a1, a2 and b1 maximizer residuals.
    pub maximizer: f64,
    pub char_value: f64,
    pub char_gradient: f64,
    pub char_residual: f64,
    /// Monte Carlo comparisons allow this many combined standard errors.
    pub mc_sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            gibbs_identity: 1e-6,
            nishimori: 1e-8,
            derivative: 1e-4,
            mmse: 1e-4,
            trivial: 1e-14,
            initial_condition: 1e-8,
            convexity: 1e-8,
            psi_match: 1e-6,
            formula_agreement: 2e-5,
            screen: 1e-3,
            hj_residual: 1e-3,
            maximizer: 1e-3,
            char_value: 1e-4,
            char_gradient: 1e-4,
            char_residual: 1e-10,
            mc_sigmas: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentitiesConfig {
    /// Disorder samples for the per-sample <L> identity.
    pub gibbs_samples: usize,
    pub gibbs_step: f64,
    /// Nodes per dimension for the derivative and MMSE identities.
    pub derivative_nodes: usize,
    pub derivative_step: f64,
    /// System sizes for the averaged identities; the per-sample check uses `n_list`.
    pub quadrature_n_list: Vec<usize>,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        IdentitiesConfig {
            gibbs_samples: 20,
            gibbs_step: 1e-5,
            derivative_nodes: 16,
            derivative_step: 1e-4,
            quadrature_n_list: vec![1, 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortTimeConfig {
    /// Times as fractions of the contraction horizon `0.9 / L_hat`.
    pub t_fractions: Vec<f64>,
    pub lipschitz_radius: f64,
    pub lipschitz_samples: usize,
    pub fixed_point_tol: f64,
    pub max_iter: usize,
}

impl Default for ShortTimeConfig {
    fn default() -> Self {
        ShortTimeConfig {
            t_fractions: vec![0.1, 0.3, 0.5, 0.9],
            lipschitz_radius: 2.0,
            lipschitz_samples: 200,
            fixed_point_tol: 1e-12,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: Study,
    pub instance: Instance,
    /// Base seed; every random stream of a run is derived from it.
    pub seed: u64,
    pub n_list: Vec<usize>,
    pub t_grid: Vec<f64>,
    pub h_grid: Vec<SymMatrix>,
    /// The pair `(N_small, N_large)` of the decay comparisons.
    pub compare_n: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub averaging: Option<AveragingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identities: Option<IdentitiesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_time: Option<ShortTimeConfig>,
    pub output: OutputConfig,
}

/// `h` values of the default grids: a line in `D = 1`, `alpha I + beta (E12 + E21)` otherwise.
pub fn default_h_grid(d: usize) -> Vec<SymMatrix> {
    if d == 1 {
        return (1..=10).map(|k| SymMatrix::diag(&[0.1 * k as f64])).collect();
    }
    let mut grid = Vec::new();
    for alpha in [0.2, 0.5, 1.0] {
        for beta in [0.0, 0.1] {
            let mut m = SymMatrix::identity(d) * alpha;
            m.set(0, 1, beta);
            grid.push(m);
        }
    }
    grid
}

/// Gauss-Hermite nodes for psi that keep a `D`-dimensional tensor grid affordable.
pub fn default_psi_nodes(d: usize) -> usize {
    match d {
        1 => 64,
        2 => 32,
        3 => 12,
        _ => 6,
    }
}

impl ExperimentConfig {
    /// The fully explicit default configuration of `study` on `instance`.
    pub fn defaults(study: Study, instance: Instance) -> Self {
        let d = instance.d();
        let point = vec![SymMatrix::identity(d) * 0.3];
        let (n_list, t_grid, h_grid): (Vec<usize>, Vec<f64>, Vec<SymMatrix>) = match study {
            Study::Identities => (vec![1, 2, 3], vec![0.2], point),
            Study::Convergence => (vec![2, 4, 8], vec![0.0, 0.05, 0.1, 0.2, 0.4], default_h_grid(d)),
            Study::Concentration => ((2..=10).collect(), vec![0.2], point),
            Study::Mmse => (vec![2, 4, 8], vec![0.2], default_h_grid(d)),
            Study::ShortTime => (Vec::new(), Vec::new(), default_h_grid(d)),
            Study::VariationalGrid => (Vec::new(), vec![0.0, 0.05, 0.1, 0.2, 0.4], default_h_grid(d)),
        };
        let averaging = match study {
            Study::Identities => Some(AveragingConfig {
                mode: Mode::Quadrature,
                nodes: 12,
                scheme: QuadratureScheme::Observation,
                budget: 20_000,
            }),
            Study::Convergence | Study::Mmse => Some(AveragingConfig {
                mode: Mode::Mc,
                nodes: 12,
                scheme: QuadratureScheme::Observation,
                budget: 4_000,
            }),
            Study::Concentration => Some(AveragingConfig {
                mode: Mode::Mc,
                nodes: 12,
                scheme: QuadratureScheme::Observation,
                budget: 20_000,
            }),
            Study::ShortTime | Study::VariationalGrid => None,
        };
        let solver = (study != Study::Identities).then(|| SolverConfig {
            starts: if d == 1 { 16 } else { 4 },
            tol: 1e-9,
            max_iter: 2000,
            psi_nodes: default_psi_nodes(d),
            fd_step: 1e-4,
        });
        ExperimentConfig {
            study,
            instance,
            seed: 1,
            n_list,
            t_grid,
            h_grid,
            compare_n: [2, 8],
            averaging,
            solver,
            tolerances: Tolerances::default(),
            identities: (study == Study::Identities).then(IdentitiesConfig::default),
            short_time: (study == Study::ShortTime).then(ShortTimeConfig::default),
            output: OutputConfig {
                dir: PathBuf::from("out"),
                formats: vec![Format::Csv, Format::Json],
            },
        }
    }

    /// Parses `text` and merges it over the defaults.
    ///
    /// `study` is the study requested by the caller (the CLI verb); a `study`
    /// key in the file must agree with it.
    pub fn from_toml_str(text: &str, study: Option<Study>) -> Result<Self> {
        let table: toml::Table =
            toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        let in_file = table
            .get("study")
            .map(|v| Study::deserialize(v.clone()).map_err(|e| LabError::Config(format!("study: {e}"))))
            .transpose()?;
        let study = match (study, in_file) {
            (Some(a), Some(b)) if a != b => {
                return Err(LabError::Config(format!(
                    "config is for study `{}` but `{}` was requested",
                    b.name(),
                    a.name()
                )))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(LabError::Config("no study given".into())),
        };
        let instance = match table.get("instance") {
            Some(v) => Instance::deserialize(v.clone())
                .map_err(|e| LabError::Config(format!("instance: {e}")))?,
            None => Instance::reference(),
        };
        let defaults = Self::defaults(study, instance);
        let mut merged = toml::Table::try_from(&defaults)
            .map_err(|e| LabError::Config(format!("cannot serialize defaults: {e}")))?;
        for (key, value) in table {
            if key == "instance" {
                // Already parsed above; keep the validated form.
                continue;
            }
            merge(&mut merged, key, value);
        }
        let cfg = ExperimentConfig::deserialize(toml::Value::Table(merged))
            .map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, study: Option<Study>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, study).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn d(&self) -> usize {
        self.instance.d()
    }

    pub fn h_points(&self) -> Result<Vec<ConePoint>> {
        Ok(self
            .h_grid
            .iter()
            .map(|h| ConePoint::new(*h))
            .collect::<hjcone::Result<_>>()?)
    }

    pub fn averaging(&self) -> Result<&AveragingConfig> {
        self.averaging
            .as_ref()
            .ok_or_else(|| LabError::Config(format!("study `{}` needs [averaging]", self.study.name())))
    }

    pub fn solver(&self) -> Result<&SolverConfig> {
        self.solver
            .as_ref()
            .ok_or_else(|| LabError::Config(format!("study `{}` needs [solver]", self.study.name())))
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        let d = self.d();
        if self.instance.interaction.d() != d {
            return bad(format!(
                "prior has D = {d} but the interaction has D = {}",
                self.instance.interaction.d()
            ));
        }
        for (i, h) in self.h_grid.iter().enumerate() {
            if h.dim() != d {
                return bad(format!("h_grid[{i}] is {}x{} but D = {d}", h.dim(), h.dim()));
            }
            if let Err(e) = ConePoint::new(*h) {
                return bad(format!("h_grid[{i}]: {e}"));
            }
        }
        if self.h_grid.is_empty() {
            return bad("h_grid is empty".into());
        }
        if let Some(i) = self.t_grid.iter().position(|t| !(t.is_finite() && *t >= 0.0)) {
            return bad(format!("t_grid[{i}] = {} is not a finite nonnegative time", self.t_grid[i]));
        }
        let tol = serde_json::to_value(&self.tolerances).map_err(|e| LabError::Config(e.to_string()))?;
        for (name, v) in tol.as_object().into_iter().flatten() {
            let v = v.as_f64().unwrap_or(f64::NAN);
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("tolerances.{name} = {v} must be finite and nonnegative"));
            }
        }
        let section = |present: bool, name: &str, wanted: bool| {
            if present && !wanted {
                Err(LabError::Config(format!(
                    "[{name}] does not apply to study `{}`",
                    self.study.name()
                )))
            } else if !present && wanted {
                Err(LabError::Config(format!("study `{}` needs [{name}]", self.study.name())))
            } else {
                Ok(())
            }
        };
        section(self.identities.is_some(), "identities", self.study == Study::Identities)?;
        section(self.short_time.is_some(), "short_time", self.study == Study::ShortTime)?;
        section(self.averaging.is_some(), "averaging", self.study.uses_models())?;
        section(self.solver.is_some(), "solver", self.study != Study::Identities)?;
        if self.study.uses_models() {
            if self.n_list.is_empty() || self.n_list.contains(&0) {
                return bad("n_list must be a nonempty list of positive sizes".into());
            }
            let av = self.averaging()?;
            if av.nodes == 0 || av.nodes > hjcone::quadrature::MAX_NODES {
                return bad(format!("averaging.nodes = {} outside 1..={}", av.nodes, hjcone::quadrature::MAX_NODES));
            }
            if av.mode == Mode::Mc && av.budget < hjcone::model::MIN_MC_BUDGET {
                return bad(format!(
                    "averaging.budget = {} is below the Monte Carlo minimum {}",
                    av.budget,
                    hjcone::model::MIN_MC_BUDGET
                ));
            }
        } else if !self.n_list.is_empty() {
            return bad(format!("n_list does not apply to study `{}`", self.study.name()));
        }
        if self.study != Study::ShortTime && self.t_grid.is_empty() {
            return bad("t_grid is empty".into());
        }
        if matches!(self.study, Study::Convergence | Study::Concentration | Study::Mmse) {
            for n in self.compare_n {
                if !self.n_list.contains(&n) {
                    return bad(format!("compare_n entry {n} is not in n_list"));
                }
            }
            if self.compare_n[0] >= self.compare_n[1] {
                return bad("compare_n must be an increasing pair".into());
            }
        }
        if let Some(s) = &self.solver {
            if s.starts == 0 || s.max_iter == 0 || !(s.tol > 0.0) || !(s.fd_step > 0.0) || s.psi_nodes == 0 {
                return bad("solver settings must be positive".into());
            }
        }
        if let Some(i) = &self.identities {
            if i.gibbs_samples == 0 || !(i.gibbs_step > 0.0) || !(i.derivative_step > 0.0) || i.derivative_nodes == 0 {
                return bad("identities settings must be positive".into());
            }
            if i.quadrature_n_list.contains(&0) {
                return bad("identities.quadrature_n_list holds a zero size".into());
            }
        }
        match self.study {
            Study::ShortTime => {
                let s = self.short_time.as_ref().expect("checked above");
                if !self.t_grid.is_empty() {
                    return bad("short_time derives its times from short_time.t_fractions; leave t_grid empty".into());
                }
                if s.t_fractions.is_empty() || s.t_fractions.iter().any(|f| !(*f >= 0.0 && *f <= 1.0)) {
                    return bad("short_time.t_fractions must be a nonempty list in [0, 1]".into());
                }
                if !(s.lipschitz_radius > 0.0) || s.lipschitz_samples == 0 || !(s.fixed_point_tol > 0.0) || s.max_iter == 0 {
                    return bad("short_time settings must be positive".into());
                }
            }
            _ => {}
        }
        if self.output.formats.is_empty() {
            return bad("output.formats is empty".into());
        }
        Ok(())
    }
}

/// Recursive table merge; anything that is not a table on both sides is replaced.
fn merge(into: &mut toml::Table, key: String, value: toml::Value) {
    match (into.get_mut(&key), value) {
        (Some(toml::Value::Table(base)), toml::Value::Table(over)) => {
            for (k, v) in over {
                merge(base, k, v);
            }
        }
        (_, v) => {
            into.insert(key, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_study_and_dimension() {
        for study in Study::ALL {
            for inst in [Instance::reference(), Instance::matrix_reference()] {
                let cfg = ExperimentConfig::defaults(study, inst);
                cfg.validate().unwrap();
                // The echo round-trips through TOML.
                let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap(), None).unwrap();
                assert_eq!(back, cfg);
            }
        }
    }

    #[test]
    fn partial_files_merge_over_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "n_list = [2, 8]\n[averaging]\nbudget = 500\n[tolerances]\nmc_sigmas = 2.0\n",
            Some(Study::Mmse),
        )
        .unwrap();
        assert_eq!(cfg.n_list, vec![2, 8]);
        let av = cfg.averaging.unwrap();
        assert_eq!(av.budget, 500);
        assert_eq!(av.mode, Mode::Mc);
        assert_eq!(cfg.tolerances.mc_sigmas, 2.0);
        assert_eq!(cfg.tolerances.mmse, 1e-4);
    }

    #[test]
    fn rejects_inconsistent_files() {
        let cases = [
            "study = \"mmse\"",
            "bogus = 1",
            "n_list = []",
            "h_grid = [[[-1.0]]]",
            "h_grid = [[[1.0, 0.0], [0.0, 1.0]]]",
            "[short_time]\nmax_iter = 3",
            "[averaging]\nmode = \"mc\"\nbudget = 10",
            "[tolerances]\nnishimori = -1.0",
        ];
        for text in cases {
            let err = ExperimentConfig::from_toml_str(text, Some(Study::Identities));
            assert!(matches!(err, Err(LabError::Config(_))), "{text}");
        }
        for text in ["compare_n = [2, 16]", "compare_n = [8, 2]"] {
            let err = ExperimentConfig::from_toml_str(text, Some(Study::Mmse));
            assert!(matches!(err, Err(LabError::Config(_))), "{text}");
        }
    }

    #[test]
    fn instance_tables_are_validated() {
        let good = "[instance.prior]\nsupport = [[-1.0], [1.0]]\nweights = [0.5, 0.5]\n\
                    [instance.interaction]\nD = 1\np = 2\nA = [[2.0]]\ngram = [[4.0]]\n";
        let cfg = ExperimentConfig::from_toml_str(good, Some(Study::Identities)).unwrap();
        assert_eq!(cfg.instance.interaction.a(0, 0), 2.0);
        let corrupted = good.replace("gram = [[4.0]]", "gram = [[3.0]]");
        let err = ExperimentConfig::from_toml_str(&corrupted, Some(Study::Identities)).unwrap_err();
        assert!(err.to_string().contains("gram"), "{err}");
    }
}

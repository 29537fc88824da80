//! Study reports and their CSV / JSON artifacts.
//!
//! Files never contain wall-clock times, so identical configs produce
//! byte-identical files. Timing goes to the standard-output summary only.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format, Study};
use crate::error::{LabError, Result};

/// Build stamp written into every JSON artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VersionStamp {
    pub package: String,
    pub git: String,
}

impl VersionStamp {
    pub fn current() -> Self {
        VersionStamp {
            package: format!("hjlab {}", env!("CARGO_PKG_VERSION")),
            git: option_env!("HJLAB_GIT_REV").unwrap_or("unknown").to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub labels: Vec<String>,
    /// Non-finite entries (absent quantities) are `null` in JSON.
    #[serde(with = "nullable_floats")]
    pub values: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    /// The bound `measured` is held to; its source is named in `tolerance_key`.
    pub tolerance: f64,
    pub tolerance_key: String,
    /// Worst case over the checked points.
    #[serde(with = "nullable_float")]
    pub measured: f64,
    /// Points the criterion was evaluated on.
    pub checked: usize,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    #[serde(with = "nullable_float")]
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: Study,
    pub version: VersionStamp,
    pub config: ExperimentConfig,
    pub label_columns: Vec<String>,
    pub value_columns: Vec<String>,
    pub rows: Vec<Row>,
    pub criteria: Vec<Criterion>,
    pub metrics: Vec<Metric>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl StudyReport {
    pub fn new(config: &ExperimentConfig, label_columns: &[&str], value_columns: Vec<String>) -> Self {
        StudyReport {
            study: config.study,
            version: VersionStamp::current(),
            config: config.clone(),
            label_columns: label_columns.iter().map(|s| s.to_string()).collect(),
            value_columns,
            rows: Vec::new(),
            criteria: Vec::new(),
            metrics: Vec::new(),
            wall_clock: Duration::ZERO,
        }
    }

    pub fn push_row(&mut self, labels: Vec<String>, values: Vec<f64>, pass: bool) {
        debug_assert_eq!(labels.len(), self.label_columns.len());
        debug_assert_eq!(values.len(), self.value_columns.len());
        self.rows.push(Row {
            labels,
            values,
            pass,
        });
    }

    pub fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.push(Metric {
            name: name.into(),
            value,
        });
    }

    pub fn criterion(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }

    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    /// Index of a value column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.value_columns.iter().position(|c| c == name)
    }

    /// One-line machine-readable summary, including the wall clock.
    pub fn summary(&self, outputs: &[PathBuf]) -> serde_json::Value {
        serde_json::json!({
            "study": self.study.name(),
            "passed": self.passed(),
            "rows": self.rows.len(),
            "criteria": self.criteria.iter().map(|c| serde_json::json!({
                "name": c.name,
                "passed": c.passed,
                "measured": finite_or_null(c.measured),
                "tolerance": c.tolerance,
                "checked": c.checked,
            })).collect::<Vec<_>>(),
            "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "wall_clock_s": self.wall_clock.as_secs_f64(),
        })
    }
}

/// Accumulates the worst value of a check over points, then becomes a [`Criterion`].
#[derive(Clone, Debug)]
pub struct CriterionBuilder {
    name: String,
    tolerance: f64,
    tolerance_key: String,
    measured: f64,
    checked: usize,
    failures: usize,
    notes: Vec<String>,
}

impl CriterionBuilder {
    pub fn new(name: &str, tolerance_key: &str, tolerance: f64) -> Self {
        CriterionBuilder {
            name: name.to_string(),
            tolerance,
            tolerance_key: tolerance_key.to_string(),
            measured: 0.0,
            checked: 0,
            failures: 0,
            notes: Vec::new(),
        }
    }

    /// Records `error <= bound` for one point, returning whether it held.
    /// A NaN error fails.
    pub fn check_against(&mut self, error: f64, bound: f64) -> bool {
        self.checked += 1;
        if error.is_nan() || self.measured.is_nan() {
            self.measured = f64::NAN;
        } else {
            self.measured = self.measured.max(error);
        }
        let ok = error <= bound;
        if !ok {
            self.failures += 1;
        }
        ok
    }

    /// Records `error <= tolerance`.
    pub fn check(&mut self, error: f64) -> bool {
        self.check_against(error, self.tolerance)
    }

    /// Records a boolean outcome with `measured` the worst margin seen.
    pub fn check_bool(&mut self, ok: bool, measured: f64) -> bool {
        self.checked += 1;
        self.measured = self.measured.max(measured);
        if !ok {
            self.failures += 1;
        }
        ok
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn finish(self) -> Criterion {
        let mut detail = format!("{} of {} points failed", self.failures, self.checked);
        for n in &self.notes {
            detail.push_str("; ");
            detail.push_str(n);
        }
        Criterion {
            name: self.name,
            tolerance: self.tolerance,
            tolerance_key: self.tolerance_key,
            measured: self.measured,
            checked: self.checked,
            passed: self.failures == 0,
            detail,
        }
    }
}

/// Shortest decimal with 17 significant digits; `NaN`/`inf` spelled out.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

/// Writes the report in each configured format under `dir`, returning the paths.
pub fn emit(report: &StudyReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|source| LabError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for format in formats {
        let path = dir.join(format!(
            "{}.{}",
            report.study.name(),
            match format {
                Format::Csv => "csv",
                Format::Json => "json",
            }
        ));
        let bytes = match format {
            Format::Csv => csv_bytes(report).map_err(|message| LabError::Format {
                path: path.clone(),
                message,
            })?,
            Format::Json => {
                let mut b = serde_json::to_vec_pretty(report).map_err(|e| LabError::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                b.push(b'\n');
                b
            }
        };
        std::fs::write(&path, bytes).map_err(|source| LabError::Io {
            path: path.clone(),
            source,
        })?;
        out.push(path);
    }
    Ok(out)
}

fn csv_bytes(report: &StudyReport) -> std::result::Result<Vec<u8>, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = report
        .label_columns
        .iter()
        .chain(&report.value_columns)
        .map(String::as_str)
        .chain(["pass"])
        .collect();
    w.write_record(&header).map_err(|e| e.to_string())?;
    for row in &report.rows {
        let record: Vec<String> = row
            .labels
            .iter()
            .cloned()
            .chain(row.values.iter().map(|v| format_float(*v)))
            .chain([row.pass.to_string()])
            .collect();
        w.write_record(&record).map_err(|e| e.to_string())?;
    }
    w.into_inner().map_err(|e| e.to_string())
}

/// Reads a JSON artifact back.
pub fn read_json(path: &Path) -> Result<StudyReport> {
    let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| LabError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

mod nullable_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

mod nullable_floats {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| x.is_finite().then_some(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::NAN))
            .collect())
    }
}

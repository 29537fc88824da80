//! Reproducible studies tying the finite-N model to the Hamilton-Jacobi limit.
//!
//! - [`config`]: TOML experiment configs merged over explicit defaults.
//! - [`studies`]: the identity, convergence, concentration, MMSE, short-time and
//!   variational-grid studies.
//! - [`report`]: study reports and their CSV / JSON artifacts.

pub mod config;
pub mod error;
pub mod report;
pub mod studies;

pub use config::{ExperimentConfig, Instance, Mode, Study};
pub use error::{LabError, Result};
pub use report::{emit, StudyReport};
pub use studies::run;

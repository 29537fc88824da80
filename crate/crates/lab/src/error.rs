use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] hjcone::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{check}: {source}")]
    Check {
        check: String,
        #[source]
        source: hjcone::Error,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, LabError>;

/// Names the sub-check a core error came from.
pub(crate) trait CheckContext<T> {
    fn check(self, name: &str) -> Result<T>;
}

impl<T> CheckContext<T> for hjcone::Result<T> {
    fn check(self, name: &str) -> Result<T> {
        self.map_err(|source| LabError::Check {
            check: name.to_string(),
            source,
        })
    }
}

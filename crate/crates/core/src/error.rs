use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("outside the domain: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("formula unavailable: {0}")]
    FormulaUnavailable(String),

    /// The characteristic inversion did not reach tolerance; the quotient is the
    /// last observed ratio of successive step lengths.
    #[error(
        "fixed-point map failed to contract after {iterations} iterations \
         (empirical quotient {quotient:.4}; the Lipschitz estimate is probably too small)"
    )]
    NonContraction { iterations: usize, quotient: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

/// Errors produced by the predictors, the simulators and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the requested quantity is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A linear system that should be symmetric positive definite was not,
    /// or its solution failed the normal-equation residual check.
    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by the caller's input (bad domain, bad config,
    /// bad schema) as opposed to runtime or I/O failures.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::DimensionMismatch { .. }
                | Error::Config(_)
                | Error::Schema(_)
                | Error::NotFound(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

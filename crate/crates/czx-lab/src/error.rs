//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    /// A parameter is outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A cube or interval is finer than the grid can represent.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// An ancestor or scale request left the representable range.
    #[error("range error: {0}")]
    Range(String),

    /// Kernel evaluated on a coordinate line where it is undefined.
    #[error("singularity error: {0}")]
    Singularity(String),

    /// Quadrature or iteration failed to converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Operation would exceed the memory budget at this resolution.
    #[error("resource error: {0}")]
    Resource(String),

    /// A structural invariant (disjointness, sparseness) was violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Sparse builder could not find admissible thresholds.
    #[error("threshold recalibration failed: {0}")]
    Calibration(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

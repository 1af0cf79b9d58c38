use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh definition: {0}")]
    InvalidMesh(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("point {point:?} lies outside the mesh domain")]
    PointOutsideDomain { point: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("noise vector lacks hierarchical provenance")]
    MissingProvenance,

    #[error("series error: {0}")]
    Series(String),

    #[error("local conservation violated: max cell residual {0:e}")]
    Conservation(f64),

    #[error("dense oracle limited to {limit} degrees of freedom, mesh has {got}")]
    OracleTooLarge { limit: usize, got: usize },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

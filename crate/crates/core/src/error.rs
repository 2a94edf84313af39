use thiserror::Error;

/// Errors reported by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spline order {0}: supported orders are 0..=3")]
    InvalidOrder(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("index {index} out of range (valid: {range})")]
    Index { index: String, range: String },
    #[error("point ({x}, {y}, {z}) lies outside the field domain")]
    Domain { x: f64, y: f64, z: f64 },
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("linear solver did not converge after {iterations} iterations (residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },
    #[error("infeasible start: constraint residual {0:e}")]
    Infeasible(f64),
    #[error("parse error in {field}: {reason}")]
    Parse { field: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

use thiserror::Error;

/// Errors raised by the solvers and drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value for `{name}`: {reason}")]
    Validation { name: &'static str, reason: String },

    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("point (x = {x}, z = {z}) lies outside [{lower}, {upper}]")]
    Domain { x: f64, z: f64, lower: f64, upper: f64 },

    #[error("singular geometry: minimum gap {gap:e} is below {threshold:e}")]
    SingularGeometry { gap: f64, threshold: f64 },

    #[error("linear solve failed: {reason} (relative residual {residual:e})")]
    LinearSolve { reason: String, residual: f64 },

    #[error("no steady state found after {iterations} Newton iterations (residual {residual:e})")]
    NoSteadyState { iterations: usize, residual: f64 },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::Validation {
        name,
        reason: reason.into(),
    }
}

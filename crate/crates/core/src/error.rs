use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("pole error: evaluation point coincides with the probe pole (r = {r:e})")]
    Pole { r: f64 },

    #[error("quadrature did not converge: {detail}")]
    Quadrature { detail: String },

    #[error("conjugate gradients stalled after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("clearance violated at t = {t}: needle is {clearance} from the inclusion (required {required})")]
    Clearance {
        t: f64,
        clearance: f64,
        required: f64,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("need at least {needed} samples, got {got}")]
    Arity { needed: usize, got: usize },

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("plan validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

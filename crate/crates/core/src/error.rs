use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("inconsistent marginals: {0}")]
    Inconsistent(String),

    /// The entropy range collapsed (`h_max - h_min` below the denominator guard),
    /// so the scaled ratio is undefined.
    #[error("trivial instance: entropy range {range:e} is below the ratio guard")]
    TrivialInstance { range: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("load error: {0}")]
    Load(String),

    #[error("LP solver failure: {0}")]
    SolverFailure(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(
        "Newton iteration did not converge after {iterations} steps (kkt residual {residual:e})"
    )]
    NewtonFailure {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    #[error("instance too large for enumeration: {0}")]
    SizeGuard(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("heatmap error: {0}")]
    Heatmap(String),

    #[error("ratio out of range: {0}")]
    RatioRange(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

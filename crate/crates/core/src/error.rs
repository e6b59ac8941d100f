use thiserror::Error;

/// Errors produced by the learning, estimation and evaluation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("noise model invalid: {0}")]
    ModelInvalid(String),

    #[error("insufficient data: need at least {required} samples, have {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("rank-deficient Gram matrix (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error("kernel support too low: effective sample size {effective:.3} < {required:.3}")]
    LowSupport { effective: f64, required: f64 },

    #[error("matrix not positive definite: {0}")]
    Conditioning(String),

    #[error("underdetermined alignment: {0} correspondences (need at least 2)")]
    Underdetermined(usize),

    #[error("degenerate point configuration")]
    DegenerateConfiguration,

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("Gauss-Newton did not converge after {iterations} iterations (final cost {final_cost:.6e})")]
    NotConverged {
        iterations: usize,
        final_cost: f64,
        cost_trace: Vec<f64>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

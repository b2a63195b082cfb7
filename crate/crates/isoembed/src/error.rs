use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("rank-deficient system (gram determinant {gram_det:e})")]
    RankDeficient { gram_det: f64 },
    #[error("matrix not positive definite at pivot {pivot}")]
    NotPositiveDefinite { pivot: usize },
    #[error("singular matrix")]
    Singular,
    #[error("rank failure at node {node} ({family}): gram determinant {gram_det:e}")]
    RankFailure { node: String, family: String, gram_det: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error("config error in key `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

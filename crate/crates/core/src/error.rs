use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("episode already finished after {0} steps")]
    EpisodeFinished(usize),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("unknown estimator kind `{0}`")]
    UnknownEstimator(String),

    #[error("estimator context does not match estimator kind `{0}`")]
    ContextMismatch(&'static str),

    #[error("cache is stale: computed at parameter version {cached}, network is at {current}")]
    StaleCache { cached: u64, current: u64 },

    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("missing checkpoint: {}", .0.display())]
    MissingCheckpoint(PathBuf),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

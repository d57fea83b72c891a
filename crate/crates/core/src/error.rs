use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("diverged: {0}")]
    Diverged(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular allocation: {0}")]
    SingularAllocation(String),

    #[error("thrust singularity: |F_des| = {0:e}")]
    ThrustSingularity(f64),

    #[error("yaw singularity: desired thrust axis parallel to heading")]
    YawSingularity,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("horizon too short: need at least {needed} points, got {got}")]
    HorizonTooShort { needed: usize, got: usize },

    #[error("empty trace")]
    EmptyTrace,

    #[error("non-finite loss during update {update}: {detail}")]
    NonFiniteLoss { update: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Singularities are recoverable inside a closed loop (hold last wrench).
    pub fn is_singularity(&self) -> bool {
        matches!(self, Error::ThrustSingularity(_) | Error::YawSingularity)
    }
}

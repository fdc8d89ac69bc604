use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("unsupported constellation order {0} (expected 4, 16 or 64)")]
    UnsupportedOrder(usize),
    #[error("bit length {len} is not a multiple of {bits_per_symbol}")]
    LengthMismatch { len: usize, bits_per_symbol: usize },
    #[error("search space of {size} candidates exceeds cap {cap}")]
    SearchSpaceTooLarge { size: u128, cap: u128 },
    #[error("channel column {column} has squared norm {norm_sqr} below threshold")]
    DegenerateColumn { column: usize, norm_sqr: f64 },
    #[error("loss mask selects no bits")]
    EmptyMask,
    #[error("training diverged at step {step}: {reason}")]
    DivergenceDetected { step: u64, reason: String },
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::RankDeficient(_) => "rank_deficient",
            Error::NonFinite(_) => "non_finite",
            Error::UnsupportedOrder(_) => "unsupported_order",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::SearchSpaceTooLarge { .. } => "search_space_too_large",
            Error::DegenerateColumn { .. } => "degenerate_column",
            Error::EmptyMask => "empty_mask",
            Error::DivergenceDetected { .. } => "divergence",
            Error::CheckpointMismatch(_) => "checkpoint_mismatch",
            Error::InvalidCheckpoint(_) => "invalid_checkpoint",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

//! Error type shared across the toolkit.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the numerics, pooling, loss, pipeline, evaluation and
/// I/O layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A value that must be finite was NaN or infinite.
    NonFinite { context: String },
    /// Operand shapes are incompatible.
    ShapeMismatch { context: String },
    /// The Jacobi SVD did not converge within the sweep cap.
    SvdNoConvergence { sweeps: usize },
    /// A rank-k subspace was requested from a matrix whose numerical rank
    /// is smaller than k.
    RankDeficient {
        requested: usize,
        numerical_rank: usize,
    },
    /// The requested truncation rank exceeds min(rows, cols).
    RankTooLarge { requested: usize, max: usize },
    /// A class label fell outside [0, num_classes).
    LabelOutOfRange { label: usize, num_classes: usize },
    /// A P x K batch violated its structural invariants.
    BatchStructure { detail: String },
    /// Ranking was asked to run against an empty (post-filter) gallery.
    EmptyGallery,
    /// Invalid configuration or argument value.
    InvalidConfig { detail: String },
    /// Malformed on-disk data (tensor file, manifest, checkpoint).
    Format { detail: String },
    /// Underlying I/O failure.
    Io { detail: String },
    /// A numeric failure at runtime (non-finite loss or gradient).
    Numeric { detail: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
            Error::ShapeMismatch { context } => {
                write!(f, "shape mismatch: {context}")
            }
            Error::SvdNoConvergence { sweeps } => {
                write!(f, "svd did not converge within {sweeps} Jacobi sweeps")
            }
            Error::RankDeficient {
                requested,
                numerical_rank,
            } => write!(
                f,
                "rank-{requested} subspace requested but numerical rank is {numerical_rank}"
            ),
            Error::RankTooLarge { requested, max } => {
                write!(f, "rank {requested} exceeds min(rows, cols) = {max}")
            }
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::BatchStructure { detail } => write!(f, "invalid batch: {detail}"),
            Error::EmptyGallery => write!(f, "gallery is empty after filtering"),
            Error::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
            Error::Format { detail } => write!(f, "malformed data: {detail}"),
            Error::Io { detail } => write!(f, "i/o error: {detail}"),
            Error::Numeric { detail } => write!(f, "numeric failure: {detail}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io {
            detail: e.to_string(),
        }
    }
}

//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("non-finite coordinate ({lat}, {lon})")]
    NonFiniteCoordinate { lat: f64, lon: f64 },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dataset is empty or too small: {0}")]
    EmptyDataset(String),
    #[error("duplicate record id {0}")]
    DuplicateId(u64),
    #[error("non-finite feature value in record {record}")]
    NonFiniteFeature { record: usize },

    #[error("{path}: bad magic at byte 0 (expected {expected})")]
    BadMagic { path: String, expected: &'static str },
    #[error("{path}: unsupported format version {got} at byte {offset}")]
    UnsupportedVersion { path: String, got: u16, offset: u64 },
    #[error("{path}: truncated file at byte {offset} while reading {what}")]
    Truncated {
        path: String,
        offset: u64,
        what: &'static str,
    },
    #[error("{path}: row {row}: {reason}")]
    MalformedRow {
        path: String,
        row: usize,
        reason: String,
    },
    #[error("{path}: record count mismatch: coords file has {coords}, embeddings block has {embeddings}")]
    RecordCountMismatch {
        path: String,
        coords: u64,
        embeddings: u64,
    },
    #[error("{path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("covariance matrix not factorizable after jitter up to {max_jitter}")]
    CovarianceNotFactorizable { max_jitter: f64 },
    #[error("zero-variance synthetic spec: sill and nugget are both 0")]
    ZeroVariance,
    #[error("variogram fit needs at least 3 nonempty bins, found {0}")]
    TooFewBins(usize),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

/// Coarse classification used by callers that must map errors to
/// process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Invalid arguments or configuration supplied by the caller.
    Usage,
    /// Unreadable, unwritable, or malformed files.
    Io,
    /// Algorithmic failure on valid inputs.
    Numeric,
}

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            InvalidParameter { .. } => ErrorCategory::Usage,
            BadMagic { .. } | UnsupportedVersion { .. } | Truncated { .. }
            | MalformedRow { .. } | RecordCountMismatch { .. } | MalformedFile { .. }
            | Io { .. } => ErrorCategory::Io,
            _ => ErrorCategory::Numeric,
        }
    }
}

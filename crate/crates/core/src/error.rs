use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("trajectory {trajectory}: inconsistent {what}")]
    Inconsistent { trajectory: String, what: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trajectory {trajectory} has {length} observations, at least {required} required")]
    TooShort {
        trajectory: usize,
        length: usize,
        required: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("degenerate coordinates: {0}")]
    Degenerate(String),

    #[error("query lies outside the sampled manifold (all kernel weights below {0:e})")]
    Extrapolation(f64),

    #[error("duplicate nodes with conflicting values at node {index} (difference {difference:e})")]
    ConflictingDuplicates { index: usize, difference: f64 },

    #[error("kernel system is singular or ill-conditioned (residual {residual:e}); retry with a positive ridge")]
    SingularSystem { residual: f64 },

    #[error("too few nodes: {found}, need at least {required}")]
    TooFewNodes { found: usize, required: usize },

    #[error("unsupported model format version {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unequal trajectory lengths within input group {group}: {lengths:?}")]
    UnequalGroup { group: usize, lengths: Vec<usize> },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable code, printed by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "E_IO",
            Error::Parse { .. } => "E_PARSE",
            Error::Inconsistent { .. } => "E_INCONSISTENT",
            Error::Empty(_) => "E_EMPTY",
            Error::InvalidConfig(_) => "E_CONFIG",
            Error::TooShort { .. } => "E_TOO_SHORT",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::Eigen(_) => "E_EIGEN",
            Error::Degenerate(_) => "E_DEGENERATE",
            Error::Extrapolation(_) => "E_EXTRAPOLATION",
            Error::ConflictingDuplicates { .. } => "E_DUPLICATES",
            Error::SingularSystem { .. } => "E_SINGULAR",
            Error::TooFewNodes { .. } => "E_TOO_FEW_NODES",
            Error::Version { .. } => "E_VERSION",
            Error::Corrupt(_) => "E_CORRUPT",
            Error::UnequalGroup { .. } => "E_UNEQUAL_GROUP",
            Error::DegenerateFit(_) => "E_DEGENERATE_FIT",
        }
    }
}

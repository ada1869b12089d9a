use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = LuminaError> = std::result::Result<T, E>;

/// Every failure the library can surface.
///
/// [`LuminaError::class`] gives a stable single-token name that the CLI prints
/// as the machine-parsable error class.
#[derive(Debug, Error)]
pub enum LuminaError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("row {0} has zero variance")]
    ZeroVarianceRow(usize),
    #[error("non-finite value: {0}")]
    NonFiniteInput(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("eigensolver did not converge: {0}")]
    ConvergenceFailure(String),
    #[error("eigenvalue {value} of prior {prior} lies outside [0, 2]")]
    SpectralRange { prior: usize, value: f64 },
    #[error("expected {expected} views, got {got}")]
    ViewCountMismatch { expected: usize, got: usize },
    #[error("label {label} has {count} subjects, fewer than k={k}")]
    InsufficientClassSize { label: u8, count: usize, k: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    DivergenceDetected { epoch: usize },
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl LuminaError {
    pub fn class(&self) -> &'static str {
        match self {
            Self::ShapeMismatch { .. } => "ShapeMismatch",
            Self::ZeroVarianceRow(_) => "ZeroVarianceRow",
            Self::NonFiniteInput(_) => "NonFiniteInput",
            Self::InvalidInput(_) => "InvalidInput",
            Self::ConvergenceFailure(_) => "ConvergenceFailure",
            Self::SpectralRange { .. } => "SpectralRange",
            Self::ViewCountMismatch { .. } => "ViewCountMismatch",
            Self::InsufficientClassSize { .. } => "InsufficientClassSize",
            Self::DivergenceDetected { .. } => "DivergenceDetected",
            Self::ConfigMismatch(_) => "ConfigMismatch",
            Self::NonFiniteGradient(_) => "NonFiniteGradient",
            Self::Format { .. } => "FormatError",
            Self::Io { .. } => "IOFailure",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Self::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

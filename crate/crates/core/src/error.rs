use thiserror::Error;

/// Errors produced by the analysis routines.
#[derive(Debug, Error)]
pub enum ProbeError {
    /// Malformed or inconsistent input (dimensions, ranges, configuration).
    #[error("invalid input: {0}")]
    Input(String),

    /// A requested range is empty or out of bounds.
    #[error("range error: {0}")]
    Range(String),

    /// The analysis is undefined for this input (zero variance, zero spectrum, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ProbeError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        ProbeError::Input(msg.into())
    }

    pub(crate) fn range(msg: impl Into<String>) -> Self {
        ProbeError::Range(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        ProbeError::Degenerate(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, ProbeError>;

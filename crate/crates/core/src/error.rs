use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants are grouped so callers can map them to exit statuses: parameter,
/// shape, config, validation and format problems are caller mistakes;
/// numerical failures happen at run time.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("signal too short: {len} samples, need more than {min}")]
    SignalLength { len: usize, min: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch too small for batch statistics: {0} values per channel")]
    BatchTooSmall(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the inputs rather than by the computation.
    pub fn is_usage(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

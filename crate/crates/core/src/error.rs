use std::fmt;

/// Crate-wide error type.
#[derive(Debug)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// A scalar or structural argument is out of its valid domain.
    InvalidArgument(String),
    /// NaN or Inf encountered at an operation boundary in checked mode.
    NonFinite { op: &'static str, detail: String },
    /// Tape misuse: backward on a consumed tape, backward on a non-scalar, ...
    Tape(String),
    /// Training diverged (non-finite loss); carries a diagnostic summary.
    NumericFailure(String),
    /// File / format level failure with an offset into the input when known.
    Parse {
        path: String,
        offset: Option<usize>,
        msg: String,
    },
    /// Checkpoint payload failed its integrity check.
    ChecksumMismatch { expected: String, actual: String },
    /// Checkpoint does not match the network it is being loaded into.
    ConfigMismatch(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonFinite { op, detail } => write!(f, "{op}: non-finite value: {detail}"),
            Error::Tape(msg) => write!(f, "tape: {msg}"),
            Error::NumericFailure(msg) => write!(f, "numeric failure: {msg}"),
            Error::Parse { path, offset, msg } => match offset {
                Some(off) => write!(f, "{path}: parse error at byte {off}: {msg}"),
                None => write!(f, "{path}: parse error: {msg}"),
            },
            Error::ChecksumMismatch { expected, actual } => {
                write!(f, "checksum mismatch: expected {expected}, got {actual}")
            }
            Error::ConfigMismatch(msg) => write!(f, "config mismatch: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

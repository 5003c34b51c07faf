use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header {path}: {source}")]
    Header {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("payload size mismatch: header declares {expected} values, payload holds {actual}")]
    PayloadSizeMismatch { expected: usize, actual: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("value {value} at flat index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f32 },

    #[error("unsupported {what}: {value}")]
    Unsupported { what: &'static str, value: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("lesion {index} ({abnormality}) is not fully inside {location}")]
    LesionOutsideOrgan {
        index: usize,
        abnormality: String,
        location: String,
    },

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("unknown {kind}: {name}")]
    Unknown { kind: &'static str, name: String },

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("undefined: {0}")]
    Undefined(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn header(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Header {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the data.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NumericOverflow(_) | Error::NonFinite { .. })
    }
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Violations of the `.dtpw` container grammar. Each maps to one distinct
/// malformed-file condition.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"DTPW\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated header")]
    TruncatedHeader,
    #[error("truncated payload at tensor {tensor}")]
    TruncatedPayload { tensor: String },
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("tensor name is not valid UTF-8")]
    InvalidName,
    #[error("unsupported dtype tag {dtype} at tensor {tensor}")]
    UnsupportedDType { tensor: String, dtype: u8 },
    #[error("tensor {tensor} has rank {ndim}, at most 4 supported")]
    UnsupportedRank { tensor: String, ndim: u8 },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("tensor name of {0} bytes does not fit the u16 length field")]
    NameTooLong(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("unknown feature tap {0:?}")]
    UnknownTap(String),

    #[error("missing tensor {name}")]
    MissingTensor { name: String },

    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },

    #[error("no gradient for registered parameter {0}")]
    MissingGradient(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("weight file: {0}")]
    Format(#[from] FormatError),

    #[error("unsupported PNG bit depth {0}, only 8-bit is accepted")]
    UnsupportedBitDepth(u8),

    #[error("unsupported PNG color type {0}, only RGB and RGBA are accepted")]
    UnsupportedColorType(String),

    #[error("cannot decode PNG {path}: {message}")]
    ImageDecode { path: PathBuf, message: String },

    #[error("pixel value {value} outside [0, 1]")]
    PixelRange { value: f64 },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Whether the error came from the filesystem or a file's contents.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Format(_)
                | Error::ImageDecode { .. }
                | Error::UnsupportedBitDepth(_)
                | Error::UnsupportedColorType(_)
                | Error::Manifest(_)
                | Error::MissingTensor { .. }
                | Error::ShapeMismatch { .. }
        )
    }
}

use std::io;

/// Errors produced by the retrieval-augmented classification pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("zero-norm vector cannot be normalized")]
    ZeroNorm,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated file")]
    Truncated,

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("stale k-NN cache: digest {found} does not match expected {expected}")]
    StaleCache { expected: String, found: String },

    #[error("loss function is non-deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error(transparent)]
    Io(io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated
        } else {
            Error::Io(err)
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

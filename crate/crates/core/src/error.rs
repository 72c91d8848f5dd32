use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint: unsupported format version {found} (this build reads {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checkpoint: truncated while reading {0}")]
    Truncated(String),

    #[error("checkpoint: duplicate tensor name {0:?}")]
    DuplicateTensor(String),

    #[error("checkpoint: corrupt header: {0}")]
    CorruptHeader(String),

    #[error("image: {0}")]
    Image(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("model: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        msg: msg.into(),
    }
}

pub(crate) fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

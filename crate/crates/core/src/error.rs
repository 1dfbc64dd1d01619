use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image {width}x{height} is too small (minimum side {min})")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },

    #[error("homography is singular (|det| = {det:e})")]
    SingularHomography { det: f64 },

    #[error("point ({x}, {y}) lies outside the {width}x{height} map")]
    OutOfBounds {
        x: f32,
        y: f32,
        width: usize,
        height: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config: {0}")]
    Config(String),

    #[error("{0}")]
    Degenerate(String),

    #[error("training aborted at step {step}: {detail}")]
    NumericAbort { step: u64, detail: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }

    /// True for failures caused by bad numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NumericAbort { .. })
    }
}

/// Checkpoint decoding failures. Each variant has its own [`code`](Self::code).
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a checkpoint)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("payload CRC mismatch (stored {stored:08x}, computed {computed:08x})")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("checkpoint holds network `{found}`, expected `{expected}`")]
    WrongNetwork {
        expected: &'static str,
        found: String,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl CheckpointError {
    pub fn code(&self) -> u32 {
        match self {
            CheckpointError::BadMagic => 10,
            CheckpointError::UnsupportedVersion(_) => 11,
            CheckpointError::CrcMismatch { .. } => 12,
            CheckpointError::WrongNetwork { .. } => 13,
            CheckpointError::Malformed(_) => 14,
        }
    }
}

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{stream} frame {index} missing")]
    MissingFrame { stream: &'static str, index: usize },

    #[error("{stream} frame {index} has size {actual:?}, expected {expected:?}")]
    FrameSize {
        stream: &'static str,
        index: usize,
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("{stream} frame {index}: {reason}")]
    FrameFormat {
        stream: &'static str,
        index: usize,
        reason: String,
    },

    #[error("frame count mismatch: {rgb} rgb vs {depth} depth")]
    FrameCountMismatch { rgb: usize, depth: usize },

    #[error("{path}: {reason}")]
    Meta { path: PathBuf, reason: String },

    #[error("detection record on line {line}: {reason}")]
    Detection { line: usize, reason: String },

    #[error("{op}: shape mismatch, expected {expected:?}, got {actual:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("model file: bad magic")]
    BadMagic,

    #[error("model file: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("unexpected end of {0}")]
    UnexpectedEof(&'static str),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("duplicate prediction for recording {0}")]
    DuplicatePrediction(String),

    #[error("prediction for unknown recording {0}")]
    UnknownRecording(String),

    #[error("unknown container class {0:?}")]
    UnknownClass(String),

    #[error("{0}")]
    Csv(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], actual: &[usize]) -> Self {
        Self::Shape {
            op,
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    /// True for failures caused by arithmetic (non-finite losses or gradients)
    /// rather than malformed inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::NonFinite(_))
    }
}

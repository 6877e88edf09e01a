use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch in {dim}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        dim: String,
        expected: String,
        got: String,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("unknown architecture `{0}`")]
    UnknownArch(String),

    #[error("unknown edge method `{name}`; registered methods: {}", registered.join(", "))]
    UnknownEdgeMethod {
        name: String,
        registered: Vec<String>,
    },

    #[error("architecture {arch} requires the `{stream}` input stream")]
    MissingStream { arch: String, stream: &'static str },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("max-pool argmax map does not match: {0}")]
    StaleArgmax(String),

    #[error("non-finite value in {layer} at index {index}")]
    NonFinite { layer: String, index: usize },

    #[error("non-finite loss at iteration {iteration} (lr = {lr})")]
    Diverged { iteration: u64, lr: f64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {format} version {found} (this build reads version {supported})")]
    UnsupportedVersion {
        format: &'static str,
        found: u32,
        supported: u32,
    },

    #[error("truncated {format} file while reading {what}")]
    Truncated { format: &'static str, what: String },

    #[error("malformed {format} file: {reason}")]
    Malformed {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Wraps an I/O failure with the file it happened on.
    pub fn at_path(path: impl AsRef<Path>) -> impl FnOnce(io::Error) -> Self {
        let path = path.as_ref().to_path_buf();
        move |source| Error::File { path, source }
    }

    pub(crate) fn shape(
        op: &'static str,
        dim: impl Into<String>,
        expected: impl ToString,
        got: impl ToString,
    ) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::cache::BlockKey;
use crate::trk::TrkError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("object not found: {0}")]
    NotFound(String),

    #[error("offset {offset} out of range for object of {size} bytes")]
    OutOfRange { offset: u64, size: u64 },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("unsupported store uri: {0}")]
    UnsupportedUri(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid file set: {0}")]
    InvalidFileSet(String),

    #[error("storage configuration: {0}")]
    StorageConfig(String),

    #[error("cache location {path} cannot hold {requested} more bytes ({used}/{capacity} used)")]
    StorageFull {
        path: PathBuf,
        requested: u64,
        used: u64,
        capacity: u64,
    },

    #[error("prefetch worker failed on block {key}: {reason}")]
    PrefetchFailed { key: BlockKey, reason: String },

    #[error("stream is closed")]
    Closed,

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Trk(#[from] TrkError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Whether retrying the same request may succeed.
    pub fn is_transient(&self) -> bool {
        matches!(self, Error::Transport(_) | Error::Io(_))
    }
}

impl From<Error> for io::Error {
    fn from(err: Error) -> Self {
        match err {
            Error::Io(e) => e,
            Error::NotFound(_) => io::Error::new(io::ErrorKind::NotFound, err),
            Error::OutOfRange { .. } => io::Error::new(io::ErrorKind::InvalidInput, err),
            Error::Trk(_) => io::Error::new(io::ErrorKind::InvalidData, err),
            other => io::Error::other(other),
        }
    }
}

//! Crate-wide error type. Variants group into the process exit codes the
//! CLI reports: config/usage (1), data/I-O (2), numerical failure (3).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint error: bad magic (not a checkpoint file)")]
    CheckpointBadMagic,

    #[error("checkpoint error: unsupported format version {0}")]
    CheckpointBadVersion(u32),

    #[error("checkpoint error: file truncated ({0})")]
    CheckpointTruncated(String),

    #[error("checkpoint error: {0}")]
    CheckpointMalformed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code the CLI maps this error to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_)
            | Error::Io { .. }
            | Error::CheckpointBadMagic
            | Error::CheckpointBadVersion(_)
            | Error::CheckpointTruncated(_)
            | Error::CheckpointMalformed(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

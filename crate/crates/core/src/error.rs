use std::path::PathBuf;

/// Error categories surfaced to callers and mapped to CLI exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error at byte {offset}: {msg}")]
    Data { msg: String, offset: u64 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>, offset: u64) -> Self {
        Error::Data {
            msg: msg.into(),
            offset,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name: `config`, `data`, `usage` or `io`.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data { .. } => "data",
            Error::Usage(_) => "usage",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("integrity error: unresolved document ids {0:?}")]
    Integrity(Vec<String>),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("rollout {index} failed: {source}")]
    Rollout {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("endpoint error after {attempts} attempt(s): {message}")]
    Endpoint { attempts: usize, message: String },

    #[error("endpoint timed out after {attempts} attempt(s)")]
    Timeout { attempts: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("training diverged: {0}")]
    Training(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Parse { .. }
            | Error::Integrity(_)
            | Error::Retrieval(_)
            | Error::Io { .. }
            | Error::Argument(_)
            | Error::Unsupported(_) => 3,
            Error::Endpoint { .. } | Error::Timeout { .. } => 4,
            Error::Training(_) => 5,
            Error::Rollout { source, .. } => source.exit_code(),
        }
    }

    /// Short machine-parsable class tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Integrity(_) => "integrity",
            Error::Argument(_) => "argument",
            Error::Retrieval(_) => "retrieval",
            Error::Rollout { .. } => "rollout",
            Error::Endpoint { .. } => "endpoint",
            Error::Timeout { .. } => "timeout",
            Error::Unsupported(_) => "unsupported",
            Error::Training(_) => "training",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}

pub(crate) fn arg_err(message: impl Into<String>) -> Error {
    Error::Argument(message.into())
}

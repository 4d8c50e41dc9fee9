use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A dump directory or file does not follow the expected layout.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Values violate a data invariant (non-finite entries, non-positive variances).
    #[error("data error: {0}")]
    Data(String),

    /// Shapes or sample counts disagree between inputs that must match.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// A caller-supplied parameter is out of its valid range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// A learning task with a single label category.
    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    /// A numerical invariant broke inside a computation (e.g. a Gram matrix lost PSD).
    #[error("internal numerical error: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } | Error::Data(_) | Error::Consistency(_) | Error::Io { .. } => 1,
            Error::Parameter { .. } | Error::DegenerateTask(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

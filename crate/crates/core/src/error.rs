use std::path::PathBuf;

/// Errors produced by the calibration toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    /// Process exit code for the command-line front end:
    /// 1 usage, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_) => 1,
            Error::Numeric(_) => 3,
            Error::Shape(_) | Error::Io { .. } | Error::Parse { .. } | Error::Format { .. } => 2,
        }
    }
}

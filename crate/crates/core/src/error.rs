use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: bad hyperparameter, out-of-range component, unknown key.
    #[error("configuration error: {0}")]
    Config(String),

    /// API misuse: shape mismatch, empty input, non-scalar backward root.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data could not be ingested or does not support the requested plan.
    #[error("data error: {0}")]
    Data(String),

    /// A computation failed at run time (non-finite loss, diverged training).
    #[error("runtime error: {0}")]
    Runtime(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Usage(_) | Error::Runtime(_) | Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 4,
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
macro_rules! usage_err {
    ($($arg:tt)*) => { $crate::error::Error::Usage(format!($($arg)*)) };
}
macro_rules! data_err {
    ($($arg:tt)*) => { $crate::error::Error::Data(format!($($arg)*)) };
}
pub(crate) use config_err;
pub(crate) use data_err;
pub(crate) use usage_err;

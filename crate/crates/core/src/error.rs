use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse { row: usize, column: String, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate matrix: {0}")]
    DegenerateMatrix(String),

    #[error("angle undefined for zero vector (feature {0})")]
    UndefinedAngle(usize),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("unsplittable data: {0}")]
    Unsplittable(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    /// Process exit code for the command-line front end:
    /// 1 for usage errors, 2 for data problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 1,
            Error::Schema(_)
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Unsplittable(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Numerical(_) | Error::DegenerateMatrix(_) | Error::UndefinedAngle(_) | Error::UndefinedCorrelation(_) => 3,
        }
    }
}

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Shape(String),

    #[error("bounds error: {0}")]
    Bounds(String),

    #[error("parameter error: {0}")]
    Param(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("window too short: need at least 4 rows, got {0}")]
    WindowTooShort(usize),

    #[error("parse error at row {row}, column '{column}': {detail}")]
    Parse { row: usize, column: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("gradient check failed: {0}")]
    GradientMismatch(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Coarse category used for process exit codes.
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Input(_) | Error::Parse { .. } | Error::Io(_) | Error::Csv(_) | Error::Serde(_) => {
                ErrorCategory::Input
            }
            Error::NonFinite(_) | Error::GradientMismatch(_) => ErrorCategory::Numeric,
            Error::Shape(_)
            | Error::Bounds(_)
            | Error::Param(_)
            | Error::Config(_)
            | Error::WindowTooShort(_)
            | Error::Usage(_)
            | Error::Consistency(_) => ErrorCategory::Config,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorCategory {
    Input,
    Config,
    Numeric,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Input => "input",
            ErrorCategory::Config => "config",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

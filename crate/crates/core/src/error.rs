use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("mask is not binary (found value {0})")]
    NonBinaryMask(f64),

    #[error("ratio bucket [{lo}, {hi}] not reached after {attempts} attempts")]
    BucketUnreachable { lo: f64, hi: f64, attempts: u32 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn shape(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn format(path: impl ToString, message: impl ToString) -> Self {
        Error::Format {
            path: path.to_string(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by bad inputs or configuration (CLI exit code 2),
    /// false for numeric/threshold failures (exit code 3).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite(_) | Error::Numeric(_) | Error::BucketUnreachable { .. }
        )
    }
}

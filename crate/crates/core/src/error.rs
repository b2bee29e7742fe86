use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("provider error: {0}")]
    Provider(String),

    #[error("non-finite value in loss `{loss}` ({value})")]
    NonFinite { loss: String, value: f64 },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("diverged: {0}")]
    Diverged(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used as the CLI error prefix.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Validation(_) => "validation",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Provider(_) => "provider",
            Error::NonFinite { .. } => "non-finite",
            Error::Precondition(_) => "precondition",
            Error::Diverged(_) => "diverged",
        }
    }
}

macro_rules! bail_shape {
    ($($arg:tt)*) => {
        return Err($crate::Error::Shape(format!($($arg)*)))
    };
}

macro_rules! bail_validation {
    ($($arg:tt)*) => {
        return Err($crate::Error::Validation(format!($($arg)*)))
    };
}

pub(crate) use bail_shape;
pub(crate) use bail_validation;

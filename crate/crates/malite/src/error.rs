use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the CLI exit-code classes:
/// data/format problems exit with 3, numeric failures with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid patch spec: {0}")]
    InvalidPatchSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("empty dataset at {0}")]
    EmptyDataset(PathBuf),

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("bad format: {0}")]
    Format(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("png error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code class for this error (3 = data, 4 = numeric).
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

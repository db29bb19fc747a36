use std::path::PathBuf;

/// Errors raised across the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed PFM: {0}")]
    PfmHeader(String),
    #[error("aspect: environment map must be 2:1, got {width}x{height}")]
    Aspect { width: usize, height: usize },
    #[error("non-finite or negative radiance at texel ({u}, {v})")]
    NonFinite { u: usize, v: usize },
    #[error("png: {0}")]
    Png(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("role mismatch at frame {index}: expected {expected}, found {found}")]
    RoleMismatch {
        index: usize,
        expected: &'static str,
        found: String,
    },
    #[error("empty mask")]
    EmptyMask,
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 4,
            Error::Invalid(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

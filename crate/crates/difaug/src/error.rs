use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum DifaugError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by op {op_id}: {detail}")]
    NonFinite { op_id: usize, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at offset {offset}: {detail}")]
    Parse { offset: usize, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Other(String),
}

impl DifaugError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DifaugError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, DifaugError>;

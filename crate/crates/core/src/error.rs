use std::path::PathBuf;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed npy header: {0}")]
    NpyHeader(String),

    #[error("unsupported npy array: {0}")]
    NpyUnsupported(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("label {label} at sample {sample} is out of range for {classes} classes")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        classes: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class model is empty (no samples accumulated)")]
    EmptyModel,

    #[error("class mismatch: {0}")]
    ClassMismatch(String),

    #[error("probability {value} on the boundary makes the divergence infinite")]
    InfiniteDivergence { value: f64 },

    #[error("ID and OOD runs share no classes")]
    EmptyIntersection,

    #[error("training diverged: {0}")]
    Training(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

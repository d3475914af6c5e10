use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("face {0} has zero area")]
    ZeroAreaFace(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("view count mismatch: expected {expected} views, got {got}")]
    ViewCount { expected: usize, got: usize },

    #[error("label {label} is out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("checkpoint {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported; this build reads version {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training diverged at step {step}: {what}")]
    Diverged { step: u64, what: String },

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}

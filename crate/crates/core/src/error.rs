use std::path::PathBuf;

/// Errors raised across the registration engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("pivot mismatch: {a:?} vs {b:?}")]
    PivotMismatch { a: [f64; 3], b: [f64; 3] },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("size mismatch in {path}: expected {expected} bytes, found {found}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("phantom config: {0}")]
    PhantomConfig(String),
    #[error("empty segmentation: {0}")]
    EmptySegmentation(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("degenerate point cloud: {0}")]
    Degenerate(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("NCC undefined: image constant over region")]
    UndefinedNcc,
    #[error("optimizer: {0}")]
    Optimizer(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("refinement failed: {0}")]
    Refinement(String),
    #[error("config: {0}")]
    Config(String),
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("kinematics: {0}")]
    Kinematics(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::PhantomConfig(_) | Error::InvalidGeometry(_)
        )
    }
}

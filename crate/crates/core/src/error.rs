use std::path::PathBuf;

/// Errors produced by every stage of the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config: missing required field `{0}`")]
    MissingField(String),

    #[error("config: unknown perturbation type `{0}`")]
    UnknownPerturbationType(String),

    #[error("config: {0}")]
    Config(String),

    #[error("invalid parameter: {param} {constraint}")]
    InvalidParameter { param: String, constraint: String },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("{module} requires depth but none is available and no `depth_fallback_m` is configured")]
    MissingDepth { module: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },

    #[error("perturbation lifecycle: {0}")]
    Lifecycle(String),

    #[error("trajectory: line {line}: {message}")]
    TrajectoryLine { line: usize, message: String },

    #[error("trajectory: {0}")]
    Trajectory(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("slam wrapper: {0}")]
    Slam(String),

    #[error("encoder: {0}")]
    Encoder(String),

    #[error("boundary search: {0}")]
    Boundary(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(param: impl Into<String>, constraint: impl Into<String>) -> Self {
        Error::InvalidParameter {
            param: param.into(),
            constraint: constraint.into(),
        }
    }

    /// True for errors caused by the experiment configuration rather than
    /// the runtime environment.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::MissingField(_)
                | Error::UnknownPerturbationType(_)
                | Error::Config(_)
                | Error::InvalidParameter { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

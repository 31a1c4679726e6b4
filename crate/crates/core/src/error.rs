use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite objective ({0})")]
    NonFiniteObjective(f64),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("non-deterministic op `{0}`: repeated evaluation at identical parameters differs")]
    NonDeterministic(String),
    #[error("non-finite activations in {0}")]
    NonFiniteActivation(&'static str),
    #[error("non-finite loss component `{0}` ({1})")]
    NonFiniteComponent(&'static str, f64),

    #[error("singular color matrix (|det| = {0:e})")]
    SingularMatrix(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("empty mask: no pixels selected")]
    EmptyMask,

    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("unknown degradation profile `{0}`")]
    UnknownProfile(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical pipeline rather than of inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteObjective(_)
                | Error::NonFiniteActivation(_)
                | Error::NonFiniteComponent(..)
                | Error::NonDeterministic(_)
                | Error::SingularMatrix(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

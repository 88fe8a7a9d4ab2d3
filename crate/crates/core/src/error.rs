use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dependency context requires annotated corpus")]
    MissingHeads,

    #[error("feature kind {0} requires a POS-annotated corpus")]
    MissingPos(&'static str),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("factor is not orthonormal (deviation {0:.3e})")]
    NotOrthonormal(f64),

    #[error("negative entry {value} at ({row}, {col}) under {transform} transform")]
    NegativeEntry {
        row: usize,
        col: usize,
        value: f64,
        transform: &'static str,
    },

    #[error("empty feature space")]
    EmptyFeatureSpace,

    #[error("no positive singular values")]
    DegenerateSpectrum,

    #[error("at least two classes with two rows each are required")]
    TooFewClasses,

    #[error("within-class scatter is singular")]
    SingularScatter,

    #[error("not enough data: {0}")]
    NotEnoughData(String),

    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}

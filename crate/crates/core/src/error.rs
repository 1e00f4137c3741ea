use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: invalid field `{field}`: {message}")]
    ManifestInvalid {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("class {0:?} has zero records")]
    EmptyClass(crate::emotion::Label),

    #[error("cannot place {faces} non-overlapping face boxes in a {width}x{height} image")]
    SynthPlacement {
        faces: usize,
        width: u32,
        height: u32,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("file format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("png error on {path}: {message}")]
    Png { path: PathBuf, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Run(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

use std::path::PathBuf;

use crate::net::Network;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor shape {shape:?} implies {expected} values, got {actual}")]
    ShapeData {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch at layer {layer} ({kind}): expected {expected:?}, got {actual:?}")]
    LayerShape {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged {
        epoch: usize,
        batch: usize,
        last_good: Option<Box<Network<f32>>>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("checkpoint {section} CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc {
        section: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { expected: u8, found: u8 },

    #[error("config `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

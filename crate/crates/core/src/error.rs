use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the gramsr core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode {path}: {detail}")]
    Decode { path: PathBuf, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("weight file error{}: {detail}", layer.as_deref().map(|l| format!(" at layer {l}")).unwrap_or_default())]
    WeightFormat { layer: Option<String>, detail: String },

    #[error("image {height}x{width} too small for layer {layer}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        layer: String,
    },

    #[error("non-finite gradient at iteration {step}")]
    NonFiniteGradient { step: usize },

    #[error("output-side masks leave {uncovered} pixels uncovered")]
    MaskCoverage { uncovered: usize },

    #[error("mask set must contain at least one pair")]
    EmptyMaskSet,

    #[error("mask is not binary: {0}")]
    NonBinaryMask(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn decode(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Decode {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

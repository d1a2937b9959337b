use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate shift ({dx}, {dy}) on a {width}x{height} image")]
    DegenerateShift {
        dx: i64,
        dy: i64,
        width: usize,
        height: usize,
    },

    #[error("degenerate patch layout: {0}")]
    DegeneratePatchLayout(String),

    #[error("non-positive correction coefficient {value} at ({x}, {y}), channel {channel}")]
    NonPositiveAlpha {
        value: f64,
        x: usize,
        y: usize,
        channel: usize,
    },

    #[error("zero-mean channel {0}")]
    ZeroMeanChannel(usize),

    #[error("empty evaluation region")]
    EmptyRegion,

    #[error("no texture: image has zero variance")]
    NoTexture,

    #[error("empty script: {0}")]
    EmptyScript(String),

    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DegenerateShift { .. } => "degenerate_shift",
            Error::DegeneratePatchLayout(_) => "degenerate_patch_layout",
            Error::NonPositiveAlpha { .. } => "non_positive_alpha",
            Error::ZeroMeanChannel(_) => "zero_mean_channel",
            Error::EmptyRegion => "empty_region",
            Error::NoTexture => "no_texture",
            Error::EmptyScript(_) => "empty_script",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
        }
    }
}

use std::io;

/// Errors produced by the darksfm library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("target SNR {target_db} dB is unreachable; attainable range is [{min_db}, {max_db}] dB")]
    UnreachableSnr {
        target_db: f64,
        min_db: f64,
        max_db: f64,
    },

    #[error("no model: {0}")]
    NoModel(String),

    #[error("low parallax: {0}")]
    LowParallax(String),

    #[error("ambiguous pose: best candidate has {best} points in front, runner-up {runner_up}")]
    AmbiguousPose { best: usize, runner_up: usize },

    #[error("rank deficient configuration: {0}")]
    Rank(String),

    #[error("graph disconnected; unreachable component: {component:?}")]
    Disconnected { component: Vec<usize> },

    #[error("non-finite residual at observation {observation} (point {point}, image {image})")]
    NonFinite {
        observation: usize,
        point: usize,
        image: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Short machine-readable identifier for the error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::Shape(_) => "shape",
            Error::InsufficientData(_) => "insufficient_data",
            Error::UnreachableSnr { .. } => "unreachable_snr",
            Error::NoModel(_) => "no_model",
            Error::LowParallax(_) => "low_parallax",
            Error::AmbiguousPose { .. } => "ambiguous_pose",
            Error::Rank(_) => "rank",
            Error::Disconnected { .. } => "disconnected",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

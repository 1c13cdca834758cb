use thiserror::Error;

use crate::scene::Label;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gaussian {index} rejected: {reason}")]
    InvalidGaussian { index: usize, reason: String },

    #[error("gaussian index {index} out of range (scene holds {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("label {0} is not registered")]
    UnknownLabel(Label),

    #[error("the background label cannot be removed")]
    BackgroundRemoval,

    #[error("label budget of {max} labels exhausted")]
    LabelBudget { max: u32 },

    #[error("projection of gaussian {0} is not finite")]
    NonFiniteProjection(usize),

    #[error("2D covariance is singular (det = {0:e})")]
    SingularCovariance(f64),

    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("no completeness entry for rendered label {0}")]
    MissingCompleteness(Label),

    #[error("pixel ({x}, {y}) outside {width}x{height} image")]
    PixelOutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("frame {frame} failed during {phase}: {source}")]
    Pipeline {
        frame: usize,
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }
}

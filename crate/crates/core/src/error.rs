use thiserror::Error;

/// Every failure the algorithm crate can report.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("direction is undefined: pixel coincides with the vanishing point")]
    DegenerateDirection,
    #[error("lines coincide; intersection is undefined")]
    IdenticalLines,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("expected 3 channels of equal size")]
    ChannelMismatch,
    #[error("image is {width}x{height}; at least {min}x{min} is required")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("edge magnitude below epsilon; direction undefined")]
    FlatRegion,
    #[error("at least one vanishing point is required")]
    EmptyVpSet,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("tensor shapes do not match")]
    ShapeMismatch,
    #[error("timestep {t} outside 0..={max}")]
    TimestepOutOfRange { t: usize, max: usize },
    #[error("mask entries must be 0 or 1")]
    MaskNotBinary,
    #[error("noise predictor returned a tensor of the wrong shape")]
    PredictorShapeMismatch,
    #[error("noise predictor failed: {0}")]
    Predictor(alloc::string::String),
    #[error("outline pair encloses no area")]
    DegenerateRegion,
    #[error("no vanishing points detected")]
    NoDetections,
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

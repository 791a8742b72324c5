use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("window of size {size} centered at ({depth}, {lateral}) crosses the grid border")]
    OutOfBounds { depth: usize, lateral: usize, size: usize },

    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported container version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checksum error: {0}")]
    Checksum(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("CFL violation: {0}")]
    CflViolation(String),

    #[error("flat signal: zero variance input")]
    FlatSignal,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("window of size {window} does not fit the ROI ({roi_depth}x{roi_lateral})")]
    WindowExceedsRoi {
        window: usize,
        roi_depth: usize,
        roi_lateral: usize,
    },

    #[error("window of size {window} is larger than the image ({depth}x{lateral})")]
    WindowLargerThanImage {
        window: usize,
        depth: usize,
        lateral: usize,
    },

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("too few positions: {0}")]
    TooFewPositions(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "OutOfBounds",
            Error::InvalidParameter { .. } => "InvalidParameter",
            Error::GeometryMismatch(_) => "GeometryMismatch",
            Error::Io(_) => "Io",
            Error::Format(_) => "FormatError",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::Checksum(_) => "ChecksumError",
            Error::InsufficientData(_) => "InsufficientData",
            Error::CflViolation(_) => "CFLViolation",
            Error::FlatSignal => "FlatSignal",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::EmptyDataset => "EmptyDataset",
            Error::WindowExceedsRoi { .. } => "WindowExceedsRoi",
            Error::WindowLargerThanImage { .. } => "WindowLargerThanImage",
            Error::EmptyMask(_) => "EmptyMask",
            Error::TooFewPositions(_) => "TooFewPositions",
        }
    }
}

use core::fmt;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Two arrays that must agree in shape (or spacing) do not.
    ShapeMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    /// A mask has no boundary: it is entirely object or entirely background.
    DegenerateMask,
    /// A value violates the invariants of the type being constructed.
    InvalidValue(&'static str),
    /// Aggregation was asked to summarise zero defined samples.
    NoDefinedSamples,
    /// Planner input is below the minimum supported image size.
    ImageTooSmall { min_side: usize },
    EmptyDataset,
    InconsistentShapes,
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { expected, found } => write!(
                f,
                "shape mismatch: expected {}x{}x{}, found {}x{}x{}",
                expected.0, expected.1, expected.2, found.0, found.1, found.2
            ),
            Error::DegenerateMask => f.write_str("mask is all-object or all-background; no boundary exists"),
            Error::InvalidValue(what) => write!(f, "invalid value: {what}"),
            Error::NoDefinedSamples => f.write_str("no defined samples to aggregate"),
            Error::ImageTooSmall { min_side } => {
                write!(f, "image too small for planning: min side {min_side} < 32")
            }
            Error::EmptyDataset => f.write_str("dataset is empty"),
            Error::InconsistentShapes => f.write_str("dataset images have inconsistent shapes"),
        }
    }
}

impl core::error::Error for Error {}

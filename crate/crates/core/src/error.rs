use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The reduction spec or model config cannot be applied to the given grid.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// A requested merge count exceeds what the matcher can deliver on a line or region.
    #[error("infeasible rate: requested {requested} merges but only {available} available ({context})")]
    InfeasibleRate {
        requested: usize,
        available: usize,
        context: String,
    },

    #[error("invalid line: length {0} (need at least 2 tokens)")]
    InvalidLine(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    /// Window attention was asked to run on a token layout whose sides are
    /// not multiples of the window.
    #[error("spatial incompatibility: {0}")]
    SpatialIncompatibility(String),

    #[error("malformed grid file: {0}")]
    Format(String),
}

impl Error {
    /// True for errors that describe a bad spec or config rather than bad input bytes.
    pub fn is_spec_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidSpec(_)
                | Error::InfeasibleRate { .. }
                | Error::InvalidLine(_)
                | Error::SpatialIncompatibility(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

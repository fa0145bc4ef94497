use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is not positive definite (leading minor of order {minor} is not positive)")]
    NotPositiveDefinite { minor: usize },

    #[error("degenerate pair: sites {0} and {1} have a zero variogram")]
    DegeneratePair(usize, usize),

    #[error("partition enumeration capped at dimension {cap}, requested {d}")]
    PartitionCapacity { d: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty likelihood: {0}")]
    EmptyPlan(String),

    #[error("density failure at replicate {replicate}, term {term} (sites {sites:?}): {source}")]
    Term {
        replicate: usize,
        term: usize,
        sites: Vec<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("scheme `{0}` is not identifiable: sensitivity matrix is singular")]
    NonIdentifiable(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("resampling aborted: {failed} of {total} refits failed")]
    ResampleAborted { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the filesystem rather than by the numerics or
    /// the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_))
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the core routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A shape disagreement between two inputs, naming the offending axis.
    #[error("{what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite values in {what}")]
    NonFinite { what: String },

    #[error("singular matrix: {context}")]
    Singular { context: String },

    #[error("unmixing matrix of view {view} is singular")]
    SingularUnmixing { view: usize },

    #[error("covariance of view {view} is rank deficient")]
    RankDeficientCovariance { view: usize },

    /// Wraps a failure that occurred inside the solver loop.
    #[error("sweep {sweep}: {source}")]
    Sweep {
        sweep: usize,
        #[source]
        source: Box<Error>,
    },
}

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("variable {variable} has a constant series at location {location}")]
    ZeroVarianceSeries { variable: usize, location: usize },

    #[error("need at least 2 realizations, got {m}")]
    TooFewRealizations { m: usize },

    #[error("requested {requested} basis functions but the pooled matrix has rank {rank}")]
    RankDeficient { requested: usize, rank: usize },

    #[error(
        "basis columns are not orthonormal: Gram entry ({row}, {col}) deviates by {deviation:e}"
    )]
    NotOrthonormal {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("dense oracle limited to n*p <= {limit}, got {size}")]
    TooLargeForOracle { size: usize, limit: usize },

    #[error("graphical lasso problem is unbounded: {0}")]
    UnboundedProblem(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    MaxIterationsExceeded {
        iterations: usize,
        residual: f64,
        /// Best iterate reached, one matrix per level.
        best: Vec<DMatrix<f64>>,
    },

    #[error("inner solver failed at DC iteration {iteration}: {source}")]
    InnerSolverFailure {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("objective increased at DC iteration {iteration}: {previous} -> {current}")]
    NonmonotoneObjective {
        iteration: usize,
        previous: f64,
        current: f64,
    },

    #[error("linearization block at level {level} is singular; add a sparsity penalty")]
    SingularLinearization { level: usize },

    #[error("noise-variance optimizer diverged")]
    OptimizerDiverged,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("variable {variable}: {source}")]
    ForVariable {
        variable: String,
        #[source]
        source: Box<Error>,
    },

    #[error("fold {fold} is too small")]
    FoldTooSmall { fold: usize },

    #[error("every cross-validation candidate failed")]
    NoViableCandidate,

    #[error("zero variance at location {location} for variable {variable}")]
    ZeroVarianceLocation { variable: usize, location: usize },

    #[error("model has no standardization fields to invert")]
    MissingStandardization,
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    /// The proposed increment would leave the cumulative parameter non-positive.
    #[error("rejected increment: lambda_prev = {lambda_prev}, increment = {increment}")]
    RejectedIncrement { lambda_prev: f64, increment: f64 },

    /// LSQR ran out of iterations; `best` is the last iterate it produced.
    #[error("LSQR did not converge in {iterations} iterations (relative normal residual {relative_residual:.3e})")]
    MaxIterations {
        iterations: usize,
        relative_residual: f64,
        best: Vec<f64>,
    },

    #[error("objective undefined at lambda = {0}")]
    UndefinedObjective(f64),

    #[error("parameter selection failed: {0}")]
    SelectionFailed(String),

    #[error("at iteration {k}: {source}")]
    AtIteration {
        k: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            got,
        }
    }

    /// Strips any iteration context and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            e => e,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self.root(),
            Error::Singular(_)
                | Error::NumericalBreakdown(_)
                | Error::MaxIterations { .. }
                | Error::UndefinedObjective(_)
                | Error::SelectionFailed(_)
                | Error::RejectedIncrement { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

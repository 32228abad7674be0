use thiserror::Error;

/// Errors raised by the kernels, steps, engines and solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular matrix: pivot {pivot:e} at column {column}")]
    SingularMatrix { pivot: f64, column: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("GMRES breakdown at iteration {iteration} with residual {residual:e}")]
    Breakdown { iteration: usize, residual: f64 },

    #[error("singular differential system: residual stagnated at {residual:e}")]
    SingularSystem { residual: f64 },

    #[error("capped-simplex mass {mass} is infeasible for dimension {dim}")]
    InfeasibleMass { mass: f64, dim: usize },

    #[error("stale fixed point: residual {residual:e} exceeds {limit:e}")]
    StaleFixedPoint { residual: f64, limit: f64 },

    #[error("QP subproblem infeasible: {0}")]
    SubproblemInfeasible(String),

    #[error("unsupported problem shape: {0}")]
    UnsupportedProblemShape(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<V> = std::result::Result<V, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}

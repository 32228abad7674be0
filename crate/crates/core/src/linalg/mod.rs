//! Dense vector/matrix kernel and the three linear-system primitives used by
//! the backward engines: LU, unrestarted GMRES and power iteration.

mod dense;
mod gmres;
mod lu;
mod power;
pub mod vecops;

pub use dense::DenseMatrix;
pub use gmres::{gmres, gmres_traced, GmresOutcome};
pub use lu::{lu_solve, LuFactors};
pub use power::{power_iteration, PowerEstimate};

use crate::Scalar;

/// Matrix-free access to a square linear map.
pub trait LinearOperator<T: Scalar> {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[T]) -> Vec<T>;
}

impl<T: Scalar> LinearOperator<T> for DenseMatrix<T> {
    fn dim(&self) -> usize {
        debug_assert_eq!(self.rows(), self.cols());
        self.rows()
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        self.matvec(x)
    }
}

/// A linear operator backed by a closure.
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Scalar, F: Fn(&[T]) -> Vec<T>> LinearOperator<T> for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[T]) -> Vec<T> {
        (self.f)(x)
    }
}

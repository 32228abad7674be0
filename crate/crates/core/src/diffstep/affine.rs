use super::{check_inputs, DiffStep, Frozen, Linearized};
use crate::error::{check_dim, Result};
use crate::linalg::vecops::add_assign;
use crate::linalg::DenseMatrix;
use crate::Scalar;

/// Affine step `U(x, c) = Φx + Ψc + b`.
#[derive(Debug, Clone)]
pub struct AffineStep<T> {
    phi: DenseMatrix<T>,
    psi: DenseMatrix<T>,
    offset: Vec<T>,
}

/// Builds `U(x, c) = Φx + Ψc + b`. `Φ` is `m×n`, `Ψ` is `m×p`, `b` has length `m`.
pub fn affine<T: Scalar>(phi: DenseMatrix<T>, psi: DenseMatrix<T>, offset: Vec<T>) -> Result<AffineStep<T>> {
    check_dim("affine: Ψ rows", phi.rows(), psi.rows())?;
    check_dim("affine: offset", phi.rows(), offset.len())?;
    Ok(AffineStep { phi, psi, offset })
}

impl<T: Scalar> AffineStep<T> {
    /// `U(x, c) = a·x + c` on `ℝⁿ`.
    pub fn scaled_identity(n: usize, a: T) -> Self {
        Self {
            phi: DenseMatrix::identity(n).scaled(a),
            psi: DenseMatrix::identity(n),
            offset: vec![T::zero(); n],
        }
    }

    pub fn phi(&self) -> &DenseMatrix<T> {
        &self.phi
    }

    pub fn psi(&self) -> &DenseMatrix<T> {
        &self.psi
    }
}

impl<T: Scalar> DiffStep<T> for AffineStep<T> {
    fn state_dim(&self) -> usize {
        self.phi.cols()
    }

    fn param_dim(&self) -> usize {
        self.psi.cols()
    }

    fn output_dim(&self) -> usize {
        self.phi.rows()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        let mut y = self.phi.matvec(x);
        add_assign(&mut y, &self.psi.matvec(c));
        add_assign(&mut y, &self.offset);
        Ok(y)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        Ok(Box::new(Frozen {
            out: self.eval(x, c)?,
            out_dim: self.output_dim(),
            state: move |g: &[T]| self.phi.matvec_t(g),
            param: move |g: &[T]| self.psi.matvec_t(g),
        }))
    }
}

use super::{check_inputs, DiffStep, Linearized};
use crate::error::{check_dim, Result};
use crate::linalg::{DenseMatrix, LuFactors};
use crate::Scalar;

/// A parametric linear system `M(c) z = r(x, c)`.
pub trait LinearSystemFamily<T: Scalar>: Send + Sync {
    /// Length of `x`.
    fn state_dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    /// Size of `M(c)`.
    fn system_dim(&self) -> usize;

    fn matrix(&self, c: &[T]) -> Result<DenseMatrix<T>>;

    fn rhs(&self, x: &[T], c: &[T]) -> Vec<T>;

    /// `wᵀ ∂r/∂x`
    fn rhs_vjp_state(&self, x: &[T], c: &[T], w: &[T]) -> Vec<T>;

    /// `wᵀ ∂r/∂c`
    fn rhs_vjp_param(&self, x: &[T], c: &[T], w: &[T]) -> Vec<T>;

    /// Contraction `Σᵢⱼ Gᵢⱼ ∂Mᵢⱼ/∂c` for the rank-one matrix `G = a bᵀ`.
    fn matrix_vjp(&self, c: &[T], a: &[T], b: &[T]) -> Vec<T>;
}

/// Step `z = M(c)⁻¹ r(x, c)` built from a [`LinearSystemFamily`].
#[derive(Debug, Clone)]
pub struct KktSolveStep<F> {
    family: F,
}

/// The pullback of `g` is `w = M⁻ᵀ g`, giving `wᵀ∂r/∂x` for the state and
/// `wᵀ∂r/∂c − (w zᵀ) : ∂M/∂c` for the parameters.
pub fn kkt_linear_solve<T: Scalar, F: LinearSystemFamily<T>>(family: F) -> KktSolveStep<F> {
    KktSolveStep { family }
}

impl<F> KktSolveStep<F> {
    pub fn family(&self) -> &F {
        &self.family
    }
}

impl<T: Scalar, F: LinearSystemFamily<T>> DiffStep<T> for KktSolveStep<F> {
    fn state_dim(&self) -> usize {
        self.family.state_dim()
    }

    fn param_dim(&self) -> usize {
        self.family.param_dim()
    }

    fn output_dim(&self) -> usize {
        self.family.system_dim()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        let m = self.family.matrix(c)?;
        LuFactors::new(&m)?.solve(&self.family.rhs(x, c))
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        check_inputs(self, x, c)?;
        let lu = LuFactors::new(&self.family.matrix(c)?)?;
        let z = lu.solve(&self.family.rhs(x, c))?;
        Ok(Box::new(KktLin {
            family: &self.family,
            lu,
            z,
            x: x.to_vec(),
            c: c.to_vec(),
        }))
    }
}

struct KktLin<'a, T, F> {
    family: &'a F,
    lu: LuFactors<T>,
    z: Vec<T>,
    x: Vec<T>,
    c: Vec<T>,
}

impl<T: Scalar, F: LinearSystemFamily<T>> Linearized<T> for KktLin<'_, T, F> {
    fn output(&self) -> &[T] {
        &self.z
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.z.len(), g.len())?;
        let w = self.lu.solve_transpose(g)?;
        Ok(self.family.rhs_vjp_state(&self.x, &self.c, &w))
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.z.len(), g.len())?;
        let w = self.lu.solve_transpose(g)?;
        let mut out = self.family.rhs_vjp_param(&self.x, &self.c, &w);
        let neg_w: Vec<T> = w.iter().map(|&v| -v).collect();
        for (o, m) in out.iter_mut().zip(self.family.matrix_vjp(&self.c, &neg_w, &self.z)) {
            *o += m;
        }
        Ok(out)
    }
}

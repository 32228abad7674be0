use super::{check_inputs, DiffStep, Linearized};
use crate::error::{check_dim, Error, Result};
use crate::linalg::vecops::dot;
use crate::linalg::DenseMatrix;
use crate::Scalar;

/// A twice-differentiable objective `f(x, c)` accessed through products.
pub trait SmoothObjective<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    fn value(&self, x: &[T], c: &[T]) -> T;

    /// `∇ₓf(x, c)`
    fn grad(&self, x: &[T], c: &[T]) -> Vec<T>;

    /// `∇²ₓf(x, c) v`
    fn hvp(&self, x: &[T], c: &[T], v: &[T]) -> Vec<T>;

    /// `gᵀ ∂(∇ₓf)/∂c`
    fn cross_vjp(&self, x: &[T], c: &[T], g: &[T]) -> Vec<T>;
}

impl<T: Scalar, O: SmoothObjective<T> + ?Sized> SmoothObjective<T> for std::sync::Arc<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn value(&self, x: &[T], c: &[T]) -> T {
        (**self).value(x, c)
    }
    fn grad(&self, x: &[T], c: &[T]) -> Vec<T> {
        (**self).grad(x, c)
    }
    fn hvp(&self, x: &[T], c: &[T], v: &[T]) -> Vec<T> {
        (**self).hvp(x, c, v)
    }
    fn cross_vjp(&self, x: &[T], c: &[T], g: &[T]) -> Vec<T> {
        (**self).cross_vjp(x, c, g)
    }
}

type ValueFn<T> = Box<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
type GradFn<T> = Box<dyn Fn(&[T], &[T]) -> Vec<T> + Send + Sync>;
type ProductFn<T> = Box<dyn Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync>;

/// Objective assembled from closures.
pub struct FnObjective<T> {
    dim: usize,
    param_dim: usize,
    value: ValueFn<T>,
    grad: GradFn<T>,
    hvp: ProductFn<T>,
    cross: ProductFn<T>,
}

impl<T: Scalar> FnObjective<T> {
    pub fn new(
        dim: usize,
        param_dim: usize,
        value: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
        grad: impl Fn(&[T], &[T]) -> Vec<T> + Send + Sync + 'static,
        hvp: impl Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync + 'static,
        cross_vjp: impl Fn(&[T], &[T], &[T]) -> Vec<T> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            param_dim,
            value: Box::new(value),
            grad: Box::new(grad),
            hvp: Box::new(hvp),
            cross: Box::new(cross_vjp),
        }
    }
}

impl<T: Scalar> SmoothObjective<T> for FnObjective<T> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn param_dim(&self) -> usize {
        self.param_dim
    }
    fn value(&self, x: &[T], c: &[T]) -> T {
        (self.value)(x, c)
    }
    fn grad(&self, x: &[T], c: &[T]) -> Vec<T> {
        (self.grad)(x, c)
    }
    fn hvp(&self, x: &[T], c: &[T], v: &[T]) -> Vec<T> {
        (self.hvp)(x, c, v)
    }
    fn cross_vjp(&self, x: &[T], c: &[T], g: &[T]) -> Vec<T> {
        (self.cross)(x, c, g)
    }
}

/// `f(x, c) = ½xᵀQx + (p₀ + Bc)ᵀx`. With `B = I` the parameters are the linear term.
#[derive(Debug, Clone)]
pub struct QuadraticObjective<T> {
    pub q: DenseMatrix<T>,
    pub p0: Vec<T>,
    pub b: DenseMatrix<T>,
}

impl<T: Scalar> QuadraticObjective<T> {
    /// `½xᵀQx + cᵀx`
    pub fn linear_param(q: DenseMatrix<T>) -> Self {
        let n = q.rows();
        Self {
            q,
            p0: vec![T::zero(); n],
            b: DenseMatrix::identity(n),
        }
    }

    fn linear_term(&self, c: &[T]) -> Vec<T> {
        let mut l = self.b.matvec(c);
        for (li, &p) in l.iter_mut().zip(&self.p0) {
            *li += p;
        }
        l
    }
}

impl<T: Scalar> SmoothObjective<T> for QuadraticObjective<T> {
    fn dim(&self) -> usize {
        self.q.rows()
    }
    fn param_dim(&self) -> usize {
        self.b.cols()
    }
    fn value(&self, x: &[T], c: &[T]) -> T {
        T::lit(0.5) * dot(x, &self.q.matvec(x)) + dot(&self.linear_term(c), x)
    }
    fn grad(&self, x: &[T], c: &[T]) -> Vec<T> {
        let mut g = self.q.matvec(x);
        for (gi, l) in g.iter_mut().zip(self.linear_term(c)) {
            *gi += l;
        }
        g
    }
    fn hvp(&self, _x: &[T], _c: &[T], v: &[T]) -> Vec<T> {
        self.q.matvec(v)
    }
    fn cross_vjp(&self, _x: &[T], _c: &[T], g: &[T]) -> Vec<T> {
        self.b.matvec_t(g)
    }
}

/// Gradient step `x − α∇ₓf(x, c)`.
#[derive(Debug, Clone)]
pub struct GradStep<T, O> {
    objective: O,
    alpha: T,
}

/// Builds the gradient step `S(x) = x − α∇ₓf(x, c)`. The Hessian is assumed symmetric.
pub fn grad_step<T: Scalar, O: SmoothObjective<T>>(objective: O, alpha: T) -> Result<GradStep<T, O>> {
    if !(alpha > T::zero()) || !alpha.is_finite() {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {alpha}")));
    }
    Ok(GradStep {
        objective,
        alpha,
    })
}

impl<T: Scalar, O> GradStep<T, O> {
    pub fn objective(&self) -> &O {
        &self.objective
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }
}

impl<T: Scalar, O: SmoothObjective<T>> DiffStep<T> for GradStep<T, O> {
    fn state_dim(&self) -> usize {
        self.objective.dim()
    }

    fn param_dim(&self) -> usize {
        self.objective.param_dim()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        let a = self.alpha;
        Ok(x.iter().zip(self.objective.grad(x, c)).map(|(&xi, gi)| xi - a * gi).collect())
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        Ok(Box::new(GradLin {
            out: self.eval(x, c)?,
            x: x.to_vec(),
            c: c.to_vec(),
            step: self,
        }))
    }
}

struct GradLin<'a, T, O> {
    out: Vec<T>,
    x: Vec<T>,
    c: Vec<T>,
    step: &'a GradStep<T, O>,
}

impl<T: Scalar, O: SmoothObjective<T>> Linearized<T> for GradLin<'_, T, O> {
    fn output(&self) -> &[T] {
        &self.out
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.x.len(), g.len())?;
        let a = self.step.alpha;
        let h = self.step.objective.hvp(&self.x, &self.c, g);
        Ok(g.iter().zip(h).map(|(&gi, hi)| gi - a * hi).collect())
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.x.len(), g.len())?;
        let a = self.step.alpha;
        Ok(self.step.objective.cross_vjp(&self.x, &self.c, g).into_iter().map(|v| -a * v).collect())
    }
}

//! Differentiable update steps `U(x, c)` with hand-written vector-Jacobian products.
//!
//! A [`DiffStep`] exposes the forward map together with `g ↦ gᵀΦ` and
//! `g ↦ gᵀΨ`, where `Φ = ∂U/∂x` and `Ψ = ∂U/∂c`. Steps whose pullbacks need
//! intermediate data (a composed chain, an inner solve) override
//! [`DiffStep::linearize`] so that repeated products at the same point reuse it.
//!
//! At nondifferentiable points (projection boundaries, threshold kinks) every
//! primitive uses the almost-everywhere derivative with ties counted as
//! inactive, i.e. derivative zero.

mod affine;
mod compose;
mod fdcheck;
mod grad;
mod kkt;
mod project;
mod prox;

use std::sync::Arc;

pub use affine::{affine, AffineStep};
pub use compose::{compose, Compose};
pub use fdcheck::{default_fd_step, fd_check, VjpReport};
pub use grad::{grad_step, FnObjective, GradStep, QuadraticObjective, SmoothObjective};
pub use kkt::{kkt_linear_solve, KktSolveStep, LinearSystemFamily};
pub use project::{box_project, capped_simplex_product, project_capped_simplex, simplex_project, BoxProject, CappedSimplex};
pub use prox::{soft_threshold, SoftThreshold};
pub(crate) use prox::shrink;

use crate::error::{check_dim, Result};
use crate::Scalar;

/// A differentiable update step `U: ℝⁿ × ℝᵖ → ℝᵐ`.
///
/// Fixed-point engines require `output_dim() == state_dim()`; intermediate
/// stages of a [`Compose`] chain may change dimension.
pub trait DiffStep<T: Scalar>: Send + Sync {
    fn state_dim(&self) -> usize;

    fn param_dim(&self) -> usize;

    fn output_dim(&self) -> usize {
        self.state_dim()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>>;

    /// Linearizes the step at `(x, c)`, caching whatever the pullbacks need.
    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>>;

    /// `gᵀ ∂U/∂x`
    fn vjp_state(&self, x: &[T], c: &[T], g: &[T]) -> Result<Vec<T>> {
        self.linearize(x, c)?.vjp_state(g)
    }

    /// `gᵀ ∂U/∂c`
    fn vjp_param(&self, x: &[T], c: &[T], g: &[T]) -> Result<Vec<T>> {
        self.linearize(x, c)?.vjp_param(g)
    }
}

/// A step frozen at one point `(x, c)`.
pub trait Linearized<T: Scalar> {
    /// `U(x, c)`
    fn output(&self) -> &[T];

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>>;

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>>;
}

/// Shared handle to a step.
pub type SharedStep<T> = Arc<dyn DiffStep<T>>;

impl<T: Scalar, S: DiffStep<T> + ?Sized> DiffStep<T> for Arc<S> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        (**self).eval(x, c)
    }
    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        (**self).linearize(x, c)
    }
    fn vjp_state(&self, x: &[T], c: &[T], g: &[T]) -> Result<Vec<T>> {
        (**self).vjp_state(x, c, g)
    }
    fn vjp_param(&self, x: &[T], c: &[T], g: &[T]) -> Result<Vec<T>> {
        (**self).vjp_param(x, c, g)
    }
}

impl<T: Scalar, S: DiffStep<T> + ?Sized> DiffStep<T> for &S {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn param_dim(&self) -> usize {
        (**self).param_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        (**self).eval(x, c)
    }
    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        (**self).linearize(x, c)
    }
}

pub(crate) fn check_inputs<T: Scalar, S: DiffStep<T> + ?Sized>(s: &S, x: &[T], c: &[T]) -> Result<()> {
    check_dim("step state", s.state_dim(), x.len())?;
    check_dim("step parameters", s.param_dim(), c.len())
}

/// Linearization of a step whose pullbacks depend on nothing but a state mask
/// or a few scalars: it stores the output and defers to two closures.
pub(crate) struct Frozen<T, FS, FP> {
    pub out: Vec<T>,
    pub out_dim: usize,
    pub state: FS,
    pub param: FP,
}

impl<T, FS, FP> Linearized<T> for Frozen<T, FS, FP>
where
    T: Scalar,
    FS: Fn(&[T]) -> Vec<T>,
    FP: Fn(&[T]) -> Vec<T>,
{
    fn output(&self) -> &[T] {
        &self.out
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.out_dim, g.len())?;
        Ok((self.state)(g))
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.out_dim, g.len())?;
        Ok((self.param)(g))
    }
}

/// Builder methods available on every step.
pub trait DiffStepExt<T: Scalar>: DiffStep<T> + Sized {
    /// Declares `p` parameters the step does not depend on (`vjp_param ≡ 0`).
    fn with_param_dim(self, p: usize) -> WithParamDim<Self> {
        WithParamDim { inner: self, p }
    }

    fn shared(self) -> SharedStep<T>
    where
        Self: 'static,
    {
        Arc::new(self)
    }
}

impl<T: Scalar, S: DiffStep<T>> DiffStepExt<T> for S {}

/// Widens the parameter space of a step that ignores its parameters.
#[derive(Debug, Clone)]
pub struct WithParamDim<S> {
    inner: S,
    p: usize,
}

impl<T: Scalar, S: DiffStep<T>> DiffStep<T> for WithParamDim<S> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn param_dim(&self) -> usize {
        self.p
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_dim("step parameters", self.p, c.len())?;
        let inner_c = vec![T::zero(); self.inner.param_dim()];
        self.inner.eval(x, &inner_c)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        check_dim("step parameters", self.p, c.len())?;
        let inner_c = vec![T::zero(); self.inner.param_dim()];
        Ok(Box::new(ParamFreeLin {
            inner: self.inner.linearize(x, &inner_c)?,
            p: self.p,
        }))
    }
}

struct ParamFreeLin<'a, T> {
    inner: Box<dyn Linearized<T> + 'a>,
    p: usize,
}

impl<T: Scalar> Linearized<T> for ParamFreeLin<'_, T> {
    fn output(&self) -> &[T] {
        self.inner.output()
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        self.inner.vjp_state(g)
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.inner.output().len(), g.len())?;
        Ok(vec![T::zero(); self.p])
    }
}

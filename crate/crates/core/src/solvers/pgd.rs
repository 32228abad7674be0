use std::sync::Arc;

use crate::diffstep::{compose, grad_step, Compose, DiffStep, DiffStepExt, SharedStep, SmoothObjective};
use crate::error::{check_dim, Error, Result};
use crate::foldengine::{FixedPoint, TraceStatus};
use crate::linalg::vecops::{dot, norm_inf, rel_l1, sub};
use crate::Scalar;

/// Step-size rule for projected gradient descent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepsizePolicy<T> {
    Constant(T),
    /// `αₖ = (f(xₖ) − f*) / max(‖∇f(xₖ)‖², 1e-12)`, clamped at zero.
    Polyak { f_star: T },
}

impl<T: Scalar> StepsizePolicy<T> {
    pub fn alpha(&self, f: T, grad: &[T]) -> T {
        match *self {
            StepsizePolicy::Constant(a) => a,
            StepsizePolicy::Polyak { f_star } => {
                let g2 = dot(grad, grad).max(T::lit(1e-12));
                ((f - f_star) / g2).max(T::zero())
            }
        }
    }
}

/// Per-iteration record of a forward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    /// Relative L1 error of each iterate against the reference, when one was given.
    pub errors: Vec<T>,
    /// Step size used at each iteration.
    pub steps: Vec<T>,
    pub status: TraceStatus,
}

/// A forward solution with its trace.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome<T> {
    pub fixed_point: FixedPoint<T>,
    pub trace: ForwardTrace<T>,
}

/// The folded PGD step `P(x − α∇ₓf(x, c))`.
pub fn pgd_step<T, O>(objective: Arc<O>, alpha: T, projection: SharedStep<T>) -> Result<Compose<T>>
where
    T: Scalar,
    O: SmoothObjective<T> + 'static,
{
    let p = objective.param_dim();
    let projection: SharedStep<T> = if projection.param_dim() == p {
        projection
    } else if projection.param_dim() == 0 {
        projection.with_param_dim(p).shared()
    } else {
        return Err(Error::DimensionMismatch {
            context: "pgd_step: projection parameters",
            expected: p,
            found: projection.param_dim(),
        });
    };
    compose(vec![grad_step(objective, alpha)?.shared(), projection])
}

/// Projected gradient descent `xₖ₊₁ = P(xₖ − αₖ∇f(xₖ))`.
///
/// Stops when `‖xₖ₊₁ − xₖ‖∞ ≤ tol·max(1, ‖xₖ‖∞)`. The projection must not
/// depend on `c`; it is evaluated with zero parameters of its own dimension.
/// The returned residual is the size of the final step.
#[allow(clippy::too_many_arguments)]
pub fn pgd_solve<T: Scalar, O: SmoothObjective<T> + ?Sized, P: DiffStep<T> + ?Sized>(
    objective: &O,
    projection: &P,
    c: &[T],
    x0: &[T],
    policy: StepsizePolicy<T>,
    tol: T,
    max_iter: usize,
    reference: Option<&[T]>,
) -> Result<SolveOutcome<T>> {
    check_dim("pgd_solve: start", objective.dim(), x0.len())?;
    check_dim("pgd_solve: parameters", objective.param_dim(), c.len())?;
    let pc = vec![T::zero(); projection.param_dim()];
    let mut x = x0.to_vec();
    let mut trace = ForwardTrace {
        errors: Vec::new(),
        steps: Vec::new(),
        status: TraceStatus::IterLimit,
    };
    let mut residual = T::infinity();
    let mut iterations = 0;
    for k in 1..=max_iter {
        let g = objective.grad(&x, c);
        let alpha = policy.alpha(objective.value(&x, c), &g);
        let y: Vec<T> = x.iter().zip(&g).map(|(&xi, &gi)| xi - alpha * gi).collect();
        let next = projection.eval(&y, &pc)?;
        residual = norm_inf(&sub(&next, &x));
        let scale = T::one().max(norm_inf(&x));
        x = next;
        iterations = k;
        trace.steps.push(alpha);
        if let Some(r) = reference {
            trace.errors.push(rel_l1(&x, r));
        }
        if !residual.is_finite() {
            trace.status = TraceStatus::Diverged;
            break;
        }
        if residual <= tol * scale {
            trace.status = TraceStatus::Converged;
            break;
        }
    }
    Ok(SolveOutcome {
        fixed_point: FixedPoint {
            x_star: x,
            c: c.to_vec(),
            residual,
            iterations,
        },
        trace,
    })
}

use std::cell::RefCell;

use super::{BackwardOptions, BackwardTrace, FixedPoint, GradResult, TraceStatus};
use crate::diffstep::{DiffStep, Linearized};
use crate::error::{check_dim, Error, Result};
use crate::linalg::vecops::{add_assign, basis, is_zero, norm_inf, sub};
use crate::linalg::{gmres, gmres_traced, power_iteration, DenseMatrix, LinearOperator, LuFactors, PowerEstimate};
use crate::Scalar;

/// `‖v‖∞` beyond which the linear fixed-point iteration is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

fn check_setup<T: Scalar, S: DiffStep<T> + ?Sized>(step: &S, fp: &FixedPoint<T>, g: &[T]) -> Result<()> {
    check_dim("fixed-point step must be square", step.state_dim(), step.output_dim())?;
    check_dim("fixed point state", step.state_dim(), fp.x_star.len())?;
    check_dim("fixed point parameters", step.param_dim(), fp.c.len())?;
    check_dim("incoming gradient", step.state_dim(), g.len())
}

fn zero_result<T: Scalar>(p: usize) -> GradResult<T> {
    GradResult {
        grad_c: vec![T::zero(); p],
        trace: BackwardTrace::bare(TraceStatus::Converged),
        iterations: 0,
    }
}

/// Linear fixed-point iteration `vₖ = Φᵀvₖ₋₁ + g`, `v₀ = g`.
///
/// Stops when `‖vₖ − vₖ₋₁‖∞ ≤ tol·max(1, ‖g‖∞)`; reports [`TraceStatus::Diverged`]
/// once `‖vₖ‖∞` exceeds [`DIVERGENCE_THRESHOLD`] and [`TraceStatus::IterLimit`]
/// when `max_iter` is exhausted. In both cases the last iterate's product is returned.
pub fn backprop_lfpi<T: Scalar, S: DiffStep<T> + ?Sized>(
    step: &S,
    fp: &FixedPoint<T>,
    g: &[T],
    opts: &BackwardOptions<T>,
) -> Result<GradResult<T>> {
    check_setup(step, fp, g)?;
    if is_zero(g) {
        return Ok(zero_result(step.param_dim()));
    }
    let lin = step.linearize(&fp.x_star, &fp.c)?;
    let stop = opts.tol * T::one().max(norm_inf(g));
    let mut trace = BackwardTrace::bare(TraceStatus::IterLimit);
    let mut v = g.to_vec();
    if opts.trace {
        opts.record(&mut trace, &lin.vjp_param(&v)?);
    }
    let mut iterations = 0;
    for k in 1..=opts.max_iter {
        let mut next = lin.vjp_state(&v)?;
        add_assign(&mut next, g);
        let diff = norm_inf(&sub(&next, &v));
        v = next;
        iterations = k;
        if opts.trace {
            opts.record(&mut trace, &lin.vjp_param(&v)?);
        }
        let size = norm_inf(&v);
        if !size.is_finite() || size.as_f64() > DIVERGENCE_THRESHOLD {
            trace.status = TraceStatus::Diverged;
            break;
        }
        if diff <= stop {
            trace.status = TraceStatus::Converged;
            break;
        }
    }
    Ok(GradResult {
        grad_c: lin.vjp_param(&v)?,
        trace,
        iterations,
    })
}

/// Matrix-free `Φᵀ` (or `I − Φᵀ`) that stashes the first pullback failure.
struct PullbackOperator<'l, T> {
    lin: &'l dyn Linearized<T>,
    dim: usize,
    shifted: bool,
    failure: RefCell<Option<Error>>,
}

impl<'l, T: Scalar> PullbackOperator<'l, T> {
    fn new(lin: &'l dyn Linearized<T>, dim: usize, shifted: bool) -> Self {
        Self {
            lin,
            dim,
            shifted,
            failure: RefCell::new(None),
        }
    }

    fn into_failure(self) -> Option<Error> {
        self.failure.into_inner()
    }
}

impl<T: Scalar> LinearOperator<T> for PullbackOperator<'_, T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, r: &[T]) -> Vec<T> {
        match self.lin.vjp_state(r) {
            Ok(v) if self.shifted => sub(r, &v),
            Ok(v) => v,
            Err(e) => {
                self.failure.borrow_mut().get_or_insert(e);
                vec![T::nan(); self.dim]
            }
        }
    }
}

/// Solves `(I − Φ)ᵀ v = g` by GMRES on `r ↦ r − Φᵀr` and returns `vᵀΨ`.
///
/// At most `min(max_iter, n)` iterations are taken. A residual still above
/// `tol·‖g‖₂` at that point is reported as [`Error::SingularSystem`].
pub fn backprop_gmres<T: Scalar, S: DiffStep<T> + ?Sized>(
    step: &S,
    fp: &FixedPoint<T>,
    g: &[T],
    opts: &BackwardOptions<T>,
) -> Result<GradResult<T>> {
    check_setup(step, fp, g)?;
    if is_zero(g) {
        return Ok(zero_result(step.param_dim()));
    }
    let n = g.len();
    let lin = step.linearize(&fp.x_star, &fp.c)?;
    let op = PullbackOperator::new(&*lin, n, true);
    let x0 = vec![T::zero(); n];
    let max_iter = opts.max_iter.min(n);
    let run = if opts.trace {
        gmres_traced(&op, g, &x0, opts.tol, max_iter)
    } else {
        gmres(&op, g, &x0, opts.tol, max_iter)
    };
    if let Some(e) = op.into_failure() {
        return Err(e);
    }
    let out = run?;
    if !out.converged {
        return Err(Error::SingularSystem {
            residual: out.final_residual.as_f64(),
        });
    }
    let mut trace = BackwardTrace::bare(TraceStatus::Converged);
    for v in &out.iterates {
        opts.record(&mut trace, &lin.vjp_param(v)?);
    }
    Ok(GradResult {
        grad_c: lin.vjp_param(&out.x)?,
        trace,
        iterations: out.iterations,
    })
}

fn phi_from<T: Scalar>(lin: &dyn Linearized<T>, n: usize) -> Result<DenseMatrix<T>> {
    let mut phi = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let row = lin.vjp_state(&basis(n, i))?;
        phi.row_mut(i).copy_from_slice(&row);
    }
    Ok(phi)
}

/// Dense `Φ = ∂U/∂x` at the fixed point, assembled from `n` basis pullbacks.
pub fn extract_phi<T: Scalar, S: DiffStep<T> + ?Sized>(step: &S, fp: &FixedPoint<T>) -> Result<DenseMatrix<T>> {
    let lin = step.linearize(&fp.x_star, &fp.c)?;
    phi_from(&*lin, step.output_dim())
}

/// Dense `Ψ = ∂U/∂c` at the fixed point.
pub fn extract_psi<T: Scalar, S: DiffStep<T> + ?Sized>(step: &S, fp: &FixedPoint<T>) -> Result<DenseMatrix<T>> {
    let lin = step.linearize(&fp.x_star, &fp.c)?;
    let n = step.output_dim();
    let mut psi = DenseMatrix::zeros(n, step.param_dim());
    for i in 0..n {
        let row = lin.vjp_param(&basis(n, i))?;
        psi.row_mut(i).copy_from_slice(&row);
    }
    Ok(psi)
}

/// Builds `Φ` explicitly, solves `(I − Φ)ᵀ v = g` by LU and returns `vᵀΨ`.
pub fn backprop_jacobian<T: Scalar, S: DiffStep<T> + ?Sized>(
    step: &S,
    fp: &FixedPoint<T>,
    g: &[T],
) -> Result<GradResult<T>> {
    check_setup(step, fp, g)?;
    if is_zero(g) {
        return Ok(zero_result(step.param_dim()));
    }
    let n = g.len();
    let lin = step.linearize(&fp.x_star, &fp.c)?;
    let phi = phi_from(&*lin, n)?;
    let system = DenseMatrix::identity(n).sub(&phi);
    let v = LuFactors::new(&system)?.solve_transpose(g)?;
    let grad_c = lin.vjp_param(&v)?;
    Ok(GradResult {
        trace: BackwardTrace {
            iterates: vec![grad_c.clone()],
            errors: Vec::new(),
            status: TraceStatus::Converged,
        },
        grad_c,
        iterations: 1,
    })
}

/// Power-iteration estimate of `ρ(Φ)` through the pullback `g ↦ Φᵀg`.
pub fn spectral_radius<T: Scalar, S: DiffStep<T> + ?Sized>(
    step: &S,
    fp: &FixedPoint<T>,
    tol: T,
    max_iter: usize,
    seed: u64,
) -> Result<PowerEstimate<T>> {
    check_setup(step, fp, &fp.x_star)?;
    let lin = step.linearize(&fp.x_star, &fp.c)?;
    let op = PullbackOperator::new(&*lin, step.state_dim(), false);
    let est = power_iteration(&op, tol, max_iter, seed);
    match op.into_failure() {
        Some(e) => Err(e),
        None => Ok(est),
    }
}

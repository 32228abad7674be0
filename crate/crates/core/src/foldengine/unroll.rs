use crate::diffstep::DiffStep;
use crate::error::{check_dim, Error, Result};
use crate::linalg::vecops::{add_assign, basis, rel_l1};
use crate::linalg::DenseMatrix;
use crate::Scalar;

/// Ground truths and switches for [`unrolled_backprop`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UnrollOptions<T> {
    /// Reference solution for the forward error trace.
    pub fwd_reference: Option<Vec<T>>,
    /// Reference gradient for the backward error trace.
    pub bwd_reference: Option<Vec<T>>,
    /// Record `gᵀJ_K` for every prefix length `K`.
    pub trace_iterates: bool,
}

/// Output of an unrolled run.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollResult<T> {
    pub x_final: Vec<T>,
    /// `gᵀ ∂x_K/∂c` by reverse sweep.
    pub grad_c: Vec<T>,
    /// Relative L1 error of `x_1 … x_K`.
    pub fwd_trace: Vec<T>,
    /// Relative L1 error of `gᵀJ_1 … gᵀJ_K`.
    pub bwd_trace: Vec<T>,
    /// `gᵀJ_1 … gᵀJ_K` when requested.
    pub bwd_iterates: Vec<Vec<T>>,
}

/// Runs `iters` steps of `U` from `x0` (which does not depend on `c`) and
/// backpropagates through the whole trajectory.
///
/// The returned gradient comes from the reverse sweep
/// `out += vjp_param(x_k, a)`, `a ← vjp_state(x_k, a)` for `k = K−1 … 0`.
/// Per-prefix gradients, needed only for traces, are produced by accumulating
/// the dense Jacobian `J_{k+1} = Φ_k J_k + Ψ_k` alongside the forward pass.
pub fn unrolled_backprop<T: Scalar, S: DiffStep<T> + ?Sized>(
    step: &S,
    x0: &[T],
    c: &[T],
    iters: usize,
    g: &[T],
    opts: &UnrollOptions<T>,
) -> Result<UnrollResult<T>> {
    unrolled_backprop_scheduled(|_, _| Ok(Box::new(step)), x0, c, iters, g, opts)
}

/// [`unrolled_backprop`] with an iteration-dependent step.
///
/// `schedule(k, x_k)` supplies the step applied at iteration `k`. Any
/// dependence of the schedule on `x_k` (as with an adaptive step size) is
/// treated as constant during differentiation.
pub fn unrolled_backprop_scheduled<'s, T, F>(
    mut schedule: F,
    x0: &[T],
    c: &[T],
    iters: usize,
    g: &[T],
    opts: &UnrollOptions<T>,
) -> Result<UnrollResult<T>>
where
    T: Scalar,
    F: FnMut(usize, &[T]) -> Result<Box<dyn DiffStep<T> + 's>>,
{
    if iters == 0 {
        return Err(Error::InvalidArgument("unrolling needs at least one iteration".into()));
    }
    let n = x0.len();
    let p = c.len();
    check_dim("incoming gradient", n, g.len())?;

    let mut xs = vec![x0.to_vec()];
    let mut steps: Vec<Box<dyn DiffStep<T> + 's>> = Vec::with_capacity(iters);
    let mut fwd_trace = Vec::new();
    let mut bwd_trace = Vec::new();
    let mut bwd_iterates = Vec::new();
    let want_prefix = opts.trace_iterates || opts.bwd_reference.is_some();
    let mut jac = DenseMatrix::<T>::zeros(n, p);

    for k in 0..iters {
        let step = schedule(k, &xs[k])?;
        check_dim("unrolled step must be square", n, step.output_dim())?;
        let next = if want_prefix {
            let lin = step.linearize(&xs[k], c)?;
            let mut phi = DenseMatrix::zeros(n, n);
            let mut psi = DenseMatrix::zeros(n, p);
            for i in 0..n {
                let e = basis(n, i);
                phi.row_mut(i).copy_from_slice(&lin.vjp_state(&e)?);
                psi.row_mut(i).copy_from_slice(&lin.vjp_param(&e)?);
            }
            jac = phi.matmul(&jac).add(&psi);
            let prefix = jac.matvec_t(g);
            if let Some(r) = &opts.bwd_reference {
                bwd_trace.push(rel_l1(&prefix, r));
            }
            if opts.trace_iterates {
                bwd_iterates.push(prefix);
            }
            lin.output().to_vec()
        } else {
            step.eval(&xs[k], c)?
        };
        if let Some(r) = &opts.fwd_reference {
            fwd_trace.push(rel_l1(&next, r));
        }
        xs.push(next);
        steps.push(step);
    }

    let mut a = g.to_vec();
    let mut grad_c = vec![T::zero(); p];
    for k in (0..iters).rev() {
        let lin = steps[k].linearize(&xs[k], c)?;
        add_assign(&mut grad_c, &lin.vjp_param(&a)?);
        if k > 0 {
            a = lin.vjp_state(&a)?;
        }
    }

    Ok(UnrollResult {
        x_final: xs.pop().expect("trajectory is non-empty"),
        grad_c,
        fwd_trace,
        bwd_trace,
        bwd_iterates,
    })
}

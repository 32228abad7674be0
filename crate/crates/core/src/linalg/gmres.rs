use crate::error::{check_dim, Error, Result};
use crate::linalg::vecops::{axpy, dot, norm2, sub};
use crate::linalg::LinearOperator;
use crate::Scalar;

/// Result of an unrestarted GMRES run.
#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome<T> {
    pub x: Vec<T>,
    /// Least-squares residual norm after each iteration, starting with `‖b − A x0‖`.
    pub residual_history: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    /// `‖A x − b‖₂` recomputed from the returned iterate.
    pub final_residual: T,
    /// Iterate after each Arnoldi step; only filled by [`gmres_traced`].
    pub iterates: Vec<Vec<T>>,
}

/// Unrestarted GMRES with modified Gram-Schmidt (two passes) and Givens updating
/// of the Hessenberg least-squares problem.
///
/// Stops once the residual drops to `tol·‖b‖₂` (or `tol` when `b = 0`). When the
/// iteration limit is hit the best iterate is returned with `converged = false`.
pub fn gmres<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x0: &[T],
    tol: T,
    max_iter: usize,
) -> Result<GmresOutcome<T>> {
    run(a, b, x0, tol, max_iter, false)
}

/// Same as [`gmres`], additionally recording the iterate after every step.
pub fn gmres_traced<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x0: &[T],
    tol: T,
    max_iter: usize,
) -> Result<GmresOutcome<T>> {
    run(a, b, x0, tol, max_iter, true)
}

fn run<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x0: &[T],
    tol: T,
    max_iter: usize,
    record: bool,
) -> Result<GmresOutcome<T>> {
    let n = a.dim();
    check_dim("gmres: rhs", n, b.len())?;
    check_dim("gmres: initial guess", n, x0.len())?;
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument("gmres tolerance must be positive".into()));
    }

    let b_norm = norm2(b);
    let target = if b_norm > T::zero() { tol * b_norm } else { tol };

    let r0 = sub(b, &a.apply(x0));
    let beta = norm2(&r0);
    let mut history = vec![beta];
    if beta <= target || max_iter == 0 {
        return Ok(finish(a, b, x0.to_vec(), history, beta <= target, 0, Vec::new()));
    }

    let mut basis: Vec<Vec<T>> = vec![r0.iter().map(|&v| v / beta).collect()];
    // Column j of the Hessenberg matrix has length j + 2 after rotation.
    let mut hess: Vec<Vec<T>> = Vec::new();
    let mut cs: Vec<T> = Vec::new();
    let mut sn: Vec<T> = Vec::new();
    let mut rhs = vec![beta];
    let mut converged = false;
    let mut breakdown = false;
    let mut iterations = 0;
    let mut iterates = Vec::new();

    for j in 0..max_iter {
        let mut w = a.apply(&basis[j]);
        check_dim("gmres: operator output", n, w.len())?;
        let w_norm = norm2(&w);
        let mut h = vec![T::zero(); j + 2];
        for _pass in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let coef = dot(&w, v);
                h[i] += coef;
                axpy(-coef, v, &mut w);
            }
        }
        let h_next = norm2(&w);
        h[j + 1] = h_next;
        breakdown = !(h_next > T::lit(1e-14) * w_norm.max(T::min_positive_value()));

        for i in 0..j {
            let t = cs[i] * h[i] + sn[i] * h[i + 1];
            h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1];
            h[i] = t;
        }
        let (c, s) = givens(h[j], h[j + 1]);
        h[j] = c * h[j] + s * h[j + 1];
        h[j + 1] = T::zero();
        // A vanishing rotated diagonal means the new direction does not
        // reduce the residual at all: the operator is singular on the Krylov space.
        let singular = !(h[j].abs() > T::lit(1e-14) * w_norm.max(T::min_positive_value()));
        cs.push(c);
        sn.push(s);
        let g = rhs[j];
        rhs[j] = c * g;
        rhs.push(-s * g);
        hess.push(h);
        iterations = j + 1;

        let res = if singular { g.abs() } else { rhs[j + 1].abs() };
        breakdown |= singular;
        let prev = *history.last().expect("history is non-empty");
        history.push(res.min(prev));
        if record {
            iterates.push(assemble(x0, &basis, &hess, &rhs, iterations));
        }

        if res <= target {
            converged = true;
            break;
        }
        if breakdown {
            break;
        }
        basis.push(w.iter().map(|&v| v / h_next).collect());
    }

    let x = assemble(x0, &basis, &hess, &rhs, iterations);
    if breakdown && !converged {
        let out = finish(a, b, x, history, false, iterations, iterates);
        if out.final_residual <= target {
            return Ok(GmresOutcome { converged: true, ..out });
        }
        return Err(Error::Breakdown {
            iteration: iterations,
            residual: out.final_residual.as_f64(),
        });
    }
    Ok(finish(a, b, x, history, converged, iterations, iterates))
}

fn givens<T: Scalar>(a: T, b: T) -> (T, T) {
    if b == T::zero() {
        return (T::one(), T::zero());
    }
    let r = a.hypot(b);
    (a / r, b / r)
}

fn assemble<T: Scalar>(x0: &[T], basis: &[Vec<T>], hess: &[Vec<T>], rhs: &[T], k: usize) -> Vec<T> {
    let mut y = vec![T::zero(); k];
    for i in (0..k).rev() {
        let mut s = rhs[i];
        for j in i + 1..k {
            s -= hess[j][i] * y[j];
        }
        let d = hess[i][i];
        y[i] = if d != T::zero() { s / d } else { T::zero() };
    }
    let mut x = x0.to_vec();
    for (yi, v) in y.iter().zip(basis) {
        axpy(*yi, v, &mut x);
    }
    x
}

fn finish<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    b: &[T],
    x: Vec<T>,
    residual_history: Vec<T>,
    converged: bool,
    iterations: usize,
    iterates: Vec<Vec<T>>,
) -> GmresOutcome<T> {
    let final_residual = norm2(&sub(&a.apply(&x), b));
    GmresOutcome {
        x,
        residual_history,
        converged,
        iterations,
        final_residual,
        iterates,
    }
}

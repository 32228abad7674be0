use crate::error::{check_dim, Error, Result};
use crate::linalg::vecops::dot;
use crate::linalg::{DenseMatrix, LuFactors};
use crate::Scalar;

/// `min ½xᵀQx + pᵀx  s.t.  Ax = b,  xᵢ ≥ 0 for i in the nonnegativity mask`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem<T> {
    pub q: DenseMatrix<T>,
    pub p: Vec<T>,
    pub a: DenseMatrix<T>,
    pub b: Vec<T>,
    pub nonneg: Vec<bool>,
}

impl<T: Scalar> QpProblem<T> {
    /// With `nonneg = true` every variable is sign-constrained, otherwise none is.
    pub fn new(q: DenseMatrix<T>, p: Vec<T>, a: DenseMatrix<T>, b: Vec<T>, nonneg: bool) -> Result<Self> {
        let n = p.len();
        Self::with_mask(q, p, a, b, vec![nonneg; n])
    }

    pub fn with_mask(q: DenseMatrix<T>, p: Vec<T>, a: DenseMatrix<T>, b: Vec<T>, nonneg: Vec<bool>) -> Result<Self> {
        let n = p.len();
        check_dim("QP: Q rows", n, q.rows())?;
        check_dim("QP: Q cols", n, q.cols())?;
        check_dim("QP: A cols", n, a.cols())?;
        check_dim("QP: b", a.rows(), b.len())?;
        check_dim("QP: nonnegativity mask", n, nonneg.len())?;
        let scale = T::one().max(q.max_abs());
        if q.asymmetry() > T::lit(1e-12) * scale {
            return Err(Error::InvalidArgument("QP matrix Q must be symmetric".into()));
        }
        if !q.is_finite() || !a.is_finite() || p.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("QP data must be finite".into()));
        }
        Ok(Self { q, p, a, b, nonneg })
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }

    pub fn m(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        T::lit(0.5) * dot(x, &self.q.matvec(x)) + dot(&self.p, x)
    }

    /// `[[Q + ρI, Aᵀ], [A, 0]]`
    pub fn kkt_matrix(&self, rho: T) -> DenseMatrix<T> {
        let (n, m) = (self.n(), self.m());
        let mut k = DenseMatrix::zeros(n + m, n + m);
        k.set_block(0, 0, &self.q);
        for i in 0..n {
            k[(i, i)] += rho;
        }
        k.set_block(0, n, &self.a.transpose());
        k.set_block(n, 0, &self.a);
        k
    }

    /// Largest violation of `Ax = b` and of the sign constraints.
    pub fn infeasibility(&self, x: &[T]) -> T {
        let eq = self
            .a
            .matvec(x)
            .iter()
            .zip(&self.b)
            .fold(T::zero(), |m, (&l, &r)| m.max((l - r).abs()));
        let sign = x
            .iter()
            .zip(&self.nonneg)
            .filter(|(_, &s)| s)
            .fold(T::zero(), |m, (&v, _)| m.max(-v));
        eq.max(sign)
    }
}

/// Solution of an equality-constrained QP with a fixed set of variables pinned at zero.
#[derive(Debug, Clone)]
pub(crate) struct FaceSolution<T> {
    pub x: Vec<T>,
    pub nu: Vec<T>,
    /// `Qx + p + Aᵀν` on every coordinate; equals the bound multipliers on the pinned set.
    pub reduced_grad: Vec<T>,
}

/// Minimizes the QP over the face `{Ax = b, x_i = 0 for pinned i}` by a direct KKT solve.
pub(crate) fn solve_face<T: Scalar>(qp: &QpProblem<T>, pinned: &[bool]) -> Result<FaceSolution<T>> {
    let (n, m) = (qp.n(), qp.m());
    let k_count = pinned.iter().filter(|&&a| a).count();
    let dim = n + m + k_count;
    let mut k = DenseMatrix::zeros(dim, dim);
    k.set_block(0, 0, &qp.q);
    k.set_block(0, n, &qp.a.transpose());
    k.set_block(n, 0, &qp.a);
    let mut rhs = vec![T::zero(); dim];
    for i in 0..n {
        rhs[i] = -qp.p[i];
    }
    rhs[n..n + m].copy_from_slice(&qp.b);
    let mut row = n + m;
    for (i, _) in pinned.iter().enumerate().filter(|(_, &a)| a) {
        k[(row, i)] = T::one();
        k[(i, row)] = T::one();
        row += 1;
    }
    let sol = LuFactors::new(&k)?.solve(&rhs)?;
    let x = sol[..n].to_vec();
    let nu = sol[n..n + m].to_vec();
    let mut reduced_grad = qp.q.matvec(&x);
    for ((r, &pi), at) in reduced_grad.iter_mut().zip(&qp.p).zip(qp.a.matvec_t(&nu)) {
        *r += pi + at;
    }
    Ok(FaceSolution { x, nu, reduced_grad })
}

/// Exact solution of a small strictly convex QP by enumerating active sets.
///
/// Every subset of the sign-constrained variables is tried as the set pinned at
/// zero; the first face whose minimizer is primal feasible with nonnegative bound
/// multipliers (both to `tol`) is returned. Exponential in the number of
/// sign-constrained variables, so intended for `n ≲ 12`.
pub fn qp_active_set_solve<T: Scalar>(qp: &QpProblem<T>, tol: T) -> Result<Vec<T>> {
    let idx: Vec<usize> = (0..qp.n()).filter(|&i| qp.nonneg[i]).collect();
    if idx.len() > 20 {
        return Err(Error::UnsupportedProblemShape(format!(
            "active-set enumeration over {} sign constraints",
            idx.len()
        )));
    }
    let mut best: Option<(T, Vec<T>)> = None;
    for mask in 0u64..(1u64 << idx.len()) {
        let mut pinned = vec![false; qp.n()];
        for (bit, &i) in idx.iter().enumerate() {
            pinned[i] = mask >> bit & 1 == 1;
        }
        let Ok(face) = solve_face(qp, &pinned) else { continue };
        let primal_ok = idx.iter().all(|&i| pinned[i] || face.x[i] >= -tol);
        let dual_ok = idx.iter().all(|&i| !pinned[i] || face.reduced_grad[i] >= -tol);
        if primal_ok && dual_ok {
            let f = qp.objective(&face.x);
            if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
                best = Some((f, face.x));
            }
        }
    }
    best.map(|(_, x)| x)
        .ok_or_else(|| Error::SubproblemInfeasible("no active set satisfies the KKT conditions".into()))
}

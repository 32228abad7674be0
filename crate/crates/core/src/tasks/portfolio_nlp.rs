use crate::linalg::DenseMatrix;
use crate::solvers::{NlpProblem, QpDataCotangent, QpDataPullback};
use crate::Scalar;

/// Risk-constrained portfolio choice: maximize `cᵀx` s.t. `xᵀVx ≤ γ`, `Σx = 1`, `x ≥ 0`.
///
/// Posed for SQP as `min −cᵀx` with equality `Σx − 1` and inequalities
/// `[−x; xᵀVx − γ]`; the risk multiplier is the last inequality multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioNlp<T> {
    pub v: DenseMatrix<T>,
    pub gamma: T,
}

impl<T: Scalar> PortfolioNlp<T> {
    pub fn n(&self) -> usize {
        self.v.rows()
    }

    pub fn risk(&self, x: &[T]) -> T {
        crate::linalg::vecops::dot(x, &self.v.matvec(x))
    }
}

impl<T: Scalar> NlpProblem<T> for PortfolioNlp<T> {
    fn dim(&self) -> usize {
        self.n()
    }

    fn param_dim(&self) -> usize {
        self.n()
    }

    fn eq_dim(&self) -> usize {
        1
    }

    fn ineq_dim(&self) -> usize {
        self.n() + 1
    }

    fn objective(&self, x: &[T], c: &[T]) -> T {
        -crate::linalg::vecops::dot(c, x)
    }

    fn gradient(&self, _x: &[T], c: &[T]) -> Vec<T> {
        c.iter().map(|&v| -v).collect()
    }

    fn eq_values(&self, x: &[T], _c: &[T]) -> Vec<T> {
        vec![x.iter().copied().sum::<T>() - T::one()]
    }

    fn eq_jacobian(&self, _x: &[T], _c: &[T]) -> DenseMatrix<T> {
        DenseMatrix::from_fn(1, self.n(), |_, _| T::one())
    }

    fn ineq_values(&self, x: &[T], _c: &[T]) -> Vec<T> {
        let mut out: Vec<T> = x.iter().map(|&v| -v).collect();
        out.push(self.risk(x) - self.gamma);
        out
    }

    fn ineq_jacobian(&self, x: &[T], _c: &[T]) -> DenseMatrix<T> {
        let n = self.n();
        let vx = self.v.matvec(x);
        DenseMatrix::from_fn(n + 1, n, |r, j| {
            if r == n {
                vx[j] + vx[j]
            } else if r == j {
                -T::one()
            } else {
                T::zero()
            }
        })
    }

    fn lagrangian_hessian(&self, _x: &[T], _le: &[T], li: &[T], _c: &[T]) -> DenseMatrix<T> {
        let two_l = li[self.n()] + li[self.n()];
        self.v.scaled(two_l)
    }

    fn qp_data_vjp(&self, x: &[T], _le: &[T], _li: &[T], _c: &[T], cot: &QpDataCotangent<T>) -> QpDataPullback<T> {
        let n = self.n();
        let two = T::lit(2.0);
        let mut g_risk_mult = T::zero();
        for i in 0..n {
            for j in 0..n {
                g_risk_mult += two * cot.hessian[(i, j)] * self.v[(i, j)];
            }
        }
        let vx = self.v.matvec(x);
        let v_cj = self.v.matvec(cot.ineq_jacobian.row(n));
        let gx = (0..n)
            .map(|j| cot.eq_values[0] - cot.ineq_values[j] + two * cot.ineq_values[n] * vx[j] + two * v_cj[j])
            .collect();
        let mut lambda_ineq = vec![T::zero(); n + 1];
        lambda_ineq[n] = g_risk_mult;
        QpDataPullback {
            x: gx,
            lambda_eq: vec![T::zero()],
            lambda_ineq,
            c: cot.gradient.iter().map(|&v| -v).collect(),
        }
    }
}

use crate::diffstep::{DiffStep, Linearized};
use crate::error::{check_dim, Error, Result};
use crate::foldengine::{FixedPoint, TraceStatus};
use crate::linalg::vecops::{norm_inf, sub};
use crate::linalg::DenseMatrix;
use crate::Scalar;

use super::admm::{admm_qp_solve_with, AdmmFold, AdmmSettings, QpParams};
use super::qp::QpProblem;

/// A smooth nonlinear program `min f(x, c)` s.t. `h(x, c) = 0`, `g(x, c) ≤ 0`,
/// with Lagrangian `L = f + λ_hᵀh + λ_gᵀg`.
pub trait NlpProblem<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn eq_dim(&self) -> usize;
    fn ineq_dim(&self) -> usize;

    fn objective(&self, x: &[T], c: &[T]) -> T;
    fn gradient(&self, x: &[T], c: &[T]) -> Vec<T>;
    fn eq_values(&self, x: &[T], c: &[T]) -> Vec<T>;
    /// `eq_dim × dim`
    fn eq_jacobian(&self, x: &[T], c: &[T]) -> DenseMatrix<T>;
    fn ineq_values(&self, x: &[T], c: &[T]) -> Vec<T>;
    /// `ineq_dim × dim`
    fn ineq_jacobian(&self, x: &[T], c: &[T]) -> DenseMatrix<T>;
    fn lagrangian_hessian(&self, x: &[T], lambda_eq: &[T], lambda_ineq: &[T], c: &[T]) -> DenseMatrix<T>;

    /// Pulls cotangents on the subproblem data (the Lagrangian Hessian, `∇f`,
    /// `h`, `∇h`, `g`, `∇g`) back to `(x, λ_h, λ_g, c)`.
    fn qp_data_vjp(
        &self,
        x: &[T],
        lambda_eq: &[T],
        lambda_ineq: &[T],
        c: &[T],
        cot: &QpDataCotangent<T>,
    ) -> QpDataPullback<T>;
}

/// Cotangents on the data of one SQP subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDataCotangent<T> {
    pub hessian: DenseMatrix<T>,
    pub gradient: Vec<T>,
    pub eq_values: Vec<T>,
    pub eq_jacobian: DenseMatrix<T>,
    pub ineq_values: Vec<T>,
    pub ineq_jacobian: DenseMatrix<T>,
}

/// Result of [`NlpProblem::qp_data_vjp`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpDataPullback<T> {
    pub x: Vec<T>,
    pub lambda_eq: Vec<T>,
    pub lambda_ineq: Vec<T>,
    pub c: Vec<T>,
}

fn is_positive_definite<T: Scalar>(a: &DenseMatrix<T>) -> bool {
    let n = a.rows();
    let mut l = DenseMatrix::<T>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    true
}

/// One SQP iteration `(x, λ) ↦ (x + αd, λ + α(μ − λ))` on the state `[x; λ_h; λ_g]`.
///
/// The subproblem `min ½dᵀ(H + σI)d + ∇fᵀd` s.t. `h + ∇h d = 0`, `g + ∇g d ≤ 0`
/// is posed over `(d, s)` with slacks `s ≥ 0` and solved by ADMM; its solution
/// map is differentiated by folding the ADMM step. `σ` is zero when the
/// Lagrangian Hessian is positive definite and otherwise doubles from 1e-8 until
/// it is; it is held constant under differentiation.
pub struct SqpStep<T: Scalar, P: ?Sized> {
    pub problem: std::sync::Arc<P>,
    pub alpha: T,
    pub admm: AdmmSettings<T>,
}

impl<T: Scalar, P: NlpProblem<T> + ?Sized> SqpStep<T, P> {
    pub fn new(problem: std::sync::Arc<P>, alpha: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidArgument("SQP step size must lie in (0, 1]".into()));
        }
        Ok(Self {
            problem,
            alpha,
            admm: AdmmSettings {
                tol: T::lit(1e-12),
                max_iter: 50_000,
                ..AdmmSettings::default()
            },
        })
    }

    pub fn with_admm(mut self, admm: AdmmSettings<T>) -> Self {
        self.admm = admm;
        self
    }

    fn split<'s>(&self, state: &'s [T]) -> (&'s [T], &'s [T], &'s [T]) {
        let n = self.problem.dim();
        let me = self.problem.eq_dim();
        (&state[..n], &state[n..n + me], &state[n + me..])
    }

    /// The slack-form subproblem at `(x, λ)`.
    pub fn subproblem(&self, state: &[T], c: &[T]) -> Result<QpProblem<T>> {
        let nlp = &*self.problem;
        check_dim("SQP state", self.state_dim(), state.len())?;
        check_dim("SQP parameters", nlp.param_dim(), c.len())?;
        let (x, le, li) = self.split(state);
        let (n, me, mi) = (nlp.dim(), nlp.eq_dim(), nlp.ineq_dim());
        let mut h = nlp.lagrangian_hessian(x, le, li, c);
        if !is_positive_definite(&h) {
            let mut sigma = T::lit(1e-8);
            loop {
                let shifted = DenseMatrix::from_fn(n, n, |i, j| if i == j { h[(i, j)] + sigma } else { h[(i, j)] });
                if is_positive_definite(&shifted) {
                    h = shifted;
                    break;
                }
                sigma = sigma + sigma;
                if !sigma.is_finite() || sigma.as_f64() > 1e12 {
                    return Err(Error::SubproblemInfeasible("Lagrangian Hessian could not be regularized".into()));
                }
            }
        }
        let big = n + mi;
        let mut q = DenseMatrix::zeros(big, big);
        q.set_block(0, 0, &h);
        let mut p = nlp.gradient(x, c);
        p.resize(big, T::zero());
        let mut a = DenseMatrix::zeros(me + mi, big);
        a.set_block(0, 0, &nlp.eq_jacobian(x, c));
        a.set_block(me, 0, &nlp.ineq_jacobian(x, c));
        for r in 0..mi {
            a[(me + r, n + r)] = T::one();
        }
        let mut b: Vec<T> = nlp.eq_values(x, c).into_iter().map(|v| -v).collect();
        b.extend(nlp.ineq_values(x, c).into_iter().map(|v| -v));
        let mut mask = vec![false; n];
        mask.resize(big, true);
        QpProblem::with_mask(q, p, a, b, mask)
    }

    fn advance(&self, state: &[T], d: &[T], mu: &[T]) -> Vec<T> {
        let n = self.problem.dim();
        let alpha = self.alpha;
        let mut next: Vec<T> = state[..n].iter().zip(d).map(|(&xi, &di)| xi + alpha * di).collect();
        next.extend(state[n..].iter().zip(mu).map(|(&l, &m)| l + alpha * (m - l)));
        next
    }

    /// One iteration without differentiation data; returns the next state and the
    /// subproblem's ADMM state.
    fn forward(&self, state: &[T], c: &[T], warm: Option<&[T]>) -> Result<(Vec<T>, Vec<T>)> {
        let qp = self.subproblem(state, c)?;
        let sol = admm_qp_solve_with(&qp, &self.admm, warm)?;
        if sol.status != TraceStatus::Converged {
            return Err(not_converged(sol.residual));
        }
        let n = self.problem.dim();
        Ok((self.advance(state, &sol.x[..n], &sol.nu), sol.state))
    }

    fn point(&self, state: &[T], c: &[T]) -> Result<SqpPoint<'_, T, P>> {
        let qp = self.subproblem(state, c)?;
        let fold = AdmmFold::solve(qp, QpParams::Full, &self.admm, None)?;
        if fold.solution().status != TraceStatus::Converged {
            return Err(not_converged(fold.solution().residual));
        }
        let n = self.problem.dim();
        let next = self.advance(state, &fold.primal()[..n], fold.multipliers());
        Ok(SqpPoint {
            step: self,
            state: state.to_vec(),
            c: c.to_vec(),
            fold,
            next,
        })
    }
}

fn not_converged<T: Scalar>(residual: T) -> Error {
    Error::SubproblemInfeasible(format!(
        "SQP subproblem did not converge (residual {:.3e})",
        residual.as_f64()
    ))
}

struct SqpPoint<'s, T: Scalar, P: ?Sized> {
    step: &'s SqpStep<T, P>,
    state: Vec<T>,
    c: Vec<T>,
    fold: AdmmFold<T>,
    next: Vec<T>,
}

impl<T: Scalar, P: NlpProblem<T> + ?Sized> SqpPoint<'_, T, P> {
    fn pullback(&self, g: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let nlp = &*self.step.problem;
        let (n, me, mi) = (nlp.dim(), nlp.eq_dim(), nlp.ineq_dim());
        check_dim("cotangent", n + me + mi, g.len())?;
        let alpha = self.step.alpha;
        let big = n + mi;
        let mut g_z = vec![T::zero(); big];
        for i in 0..n {
            g_z[i] = alpha * g[i];
        }
        let g_mu: Vec<T> = g[n..].iter().map(|&v| alpha * v).collect();
        let gp = self.fold.pullback(&g_z, &g_mu)?;
        let (gq, rest) = gp.split_at(big * big);
        let (gpl, rest) = rest.split_at(big);
        let (ga, gb) = rest.split_at((me + mi) * big);
        let cot = QpDataCotangent {
            hessian: DenseMatrix::from_fn(n, n, |i, j| gq[i * big + j]),
            gradient: gpl[..n].to_vec(),
            eq_values: gb[..me].iter().map(|&v| -v).collect(),
            eq_jacobian: DenseMatrix::from_fn(me, n, |r, j| ga[r * big + j]),
            ineq_values: gb[me..].iter().map(|&v| -v).collect(),
            ineq_jacobian: DenseMatrix::from_fn(mi, n, |r, j| ga[(me + r) * big + j]),
        };
        let (x, le, li) = self.step.split(&self.state);
        let back = nlp.qp_data_vjp(x, le, li, &self.c, &cot);
        let mut g_state = Vec::with_capacity(n + me + mi);
        g_state.extend(g[..n].iter().zip(&back.x).map(|(&a, &b)| a + b));
        let keep = T::one() - alpha;
        g_state.extend(g[n..n + me].iter().zip(&back.lambda_eq).map(|(&a, &b)| keep * a + b));
        g_state.extend(g[n + me..].iter().zip(&back.lambda_ineq).map(|(&a, &b)| keep * a + b));
        Ok((g_state, back.c))
    }
}

impl<T: Scalar, P: NlpProblem<T> + ?Sized> Linearized<T> for SqpPoint<'_, T, P> {
    fn output(&self) -> &[T] {
        &self.next
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        Ok(self.pullback(g)?.0)
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        Ok(self.pullback(g)?.1)
    }
}

impl<T: Scalar, P: NlpProblem<T> + ?Sized> DiffStep<T> for SqpStep<T, P> {
    fn state_dim(&self) -> usize {
        self.problem.dim() + self.problem.eq_dim() + self.problem.ineq_dim()
    }

    fn param_dim(&self) -> usize {
        self.problem.param_dim()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x, c, None)?.0)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        Ok(Box::new(self.point(x, c)?))
    }
}

/// Runs [`SqpStep`] from `(x0, λ0)` until `‖d‖∞ ≤ tol` and the multiplier
/// update is below `tol`, reusing each subproblem's ADMM state as the next warm
/// start. The returned fixed point is on the state `[x; λ_h; λ_g]`.
pub fn sqp_solve<T: Scalar, P: NlpProblem<T> + ?Sized>(
    step: &SqpStep<T, P>,
    c: &[T],
    x0: &[T],
    lambda0: &[T],
    tol: T,
    max_iter: usize,
) -> Result<(FixedPoint<T>, TraceStatus)> {
    let nlp = &*step.problem;
    check_dim("sqp_solve: start", nlp.dim(), x0.len())?;
    check_dim("sqp_solve: multipliers", nlp.eq_dim() + nlp.ineq_dim(), lambda0.len())?;
    let mut state = [x0, lambda0].concat();
    let mut warm: Option<Vec<T>> = None;
    let mut status = TraceStatus::IterLimit;
    let mut iterations = 0;
    for k in 1..=max_iter {
        let (next, inner) = step.forward(&state, c, warm.as_deref())?;
        let change = norm_inf(&sub(&next, &state));
        warm = Some(inner);
        state = next;
        iterations = k;
        if !change.is_finite() {
            status = TraceStatus::Diverged;
            break;
        }
        if change <= tol {
            status = TraceStatus::Converged;
            break;
        }
    }
    Ok((FixedPoint::measure(step, state, c.to_vec(), iterations)?, status))
}

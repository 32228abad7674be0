use crate::diffstep::SmoothObjective;
use crate::error::{check_dim, Error, Result};
use crate::linalg::DenseMatrix;
use crate::solvers::{NlpProblem, QpDataCotangent, QpDataPullback};

/// Smallest value the entropy terms evaluate their logarithm and curvature at.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// `f(x, c) = −cᵀx + Σ xᵢ log xᵢ`, whose minimizer over the capped simplex
/// `{Σx = k, 0 ≤ x ≤ 1}` is the smoothed top-k indicator of `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyTopK {
    pub n: usize,
    pub k: usize,
}

impl EntropyTopK {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if k == 0 || k >= n {
            return Err(Error::InvalidArgument(format!("top-k needs 1 ≤ k < n, got k={k}, n={n}")));
        }
        Ok(Self { n, k })
    }

    /// Exact minimizer `xᵢ = min(1, exp(cᵢ − 1 − ν))` together with the
    /// multiplier `ν` of `Σx = k`.
    pub fn solve_exact(&self, c: &[f64]) -> Result<(Vec<f64>, f64)> {
        check_dim("top-k embedding", self.n, c.len())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("top-k embedding is not finite".into()));
        }
        let k = self.k as f64;
        let total = |nu: f64| -> f64 { c.iter().map(|&ci| (ci - 1.0 - nu).exp().min(1.0)).sum() };
        let cmax = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cmin = c.iter().copied().fold(f64::INFINITY, f64::min);
        // at ν = cmin − 1 every coordinate is capped; at ν = cmax − 1 − ln(k/n) the sum is ≤ k
        let (mut lo, mut hi) = (cmin - 1.0, cmax - 1.0 - (k / self.n as f64).ln());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if total(mid) > k {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        let mut nu = 0.5 * (lo + hi);
        for _ in 0..4 {
            let capped: Vec<bool> = c.iter().map(|&ci| ci - 1.0 - nu >= 0.0).collect();
            let n_cap = capped.iter().filter(|&&b| b).count() as f64;
            let free: Vec<f64> = c.iter().zip(&capped).filter(|(_, &b)| !b).map(|(&ci, _)| ci - 1.0).collect();
            if free.is_empty() || k - n_cap <= 0.0 {
                break;
            }
            let m = free.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + free.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            let refined = lse - (k - n_cap).ln();
            let same = c
                .iter()
                .zip(&capped)
                .all(|(&ci, &b)| (ci - 1.0 - refined >= 0.0) == b);
            if !same {
                break;
            }
            nu = refined;
        }
        let x = c.iter().map(|&ci| (ci - 1.0 - nu).exp().min(1.0)).collect();
        Ok((x, nu))
    }

    /// The SQP state `[x; λ_eq; λ_ineq]` at the exact solution, with
    /// multipliers for `Σx − k = 0`, `−x ≤ 0` and `x − 1 ≤ 0`.
    pub fn kkt_state(&self, c: &[f64]) -> Result<Vec<f64>> {
        let (x, nu) = self.solve_exact(c)?;
        let mut state = x.clone();
        state.push(nu);
        state.extend(std::iter::repeat_n(0.0, self.n));
        state.extend(x.iter().zip(c).map(|(&xi, &ci)| if xi >= 1.0 { (ci - 1.0 - nu).max(0.0) } else { 0.0 }));
        Ok(state)
    }

    /// `c` shifted so that the unconstrained minimizer already has mass `k`,
    /// which makes `ν = 0`. Requires every shifted coordinate to stay below the cap.
    pub fn normalize(&self, c: &[f64]) -> Vec<f64> {
        let m = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + c.iter().map(|v| (v - 1.0 - m).exp()).sum::<f64>().ln();
        let shift = (self.k as f64).ln() - lse;
        c.iter().map(|v| v + shift).collect()
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

impl SmoothObjective<f64> for EntropyTopK {
    fn dim(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64], c: &[f64]) -> f64 {
        x.iter().zip(c).map(|(&xi, &ci)| xlogx(xi) - ci * xi).sum()
    }

    fn grad(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        x.iter().zip(c).map(|(&xi, &ci)| 1.0 + xi.max(ENTROPY_FLOOR).ln() - ci).collect()
    }

    fn hvp(&self, x: &[f64], _c: &[f64], v: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(v)
            .map(|(&xi, &vi)| if vi == 0.0 { 0.0 } else { vi / xi.max(ENTROPY_FLOOR) })
            .collect()
    }

    fn cross_vjp(&self, _x: &[f64], _c: &[f64], g: &[f64]) -> Vec<f64> {
        g.iter().map(|v| -v).collect()
    }
}

/// The top-k problem posed for SQP: `Σx = k`, `−x ≤ 0`, `x − 1 ≤ 0`.
impl NlpProblem<f64> for EntropyTopK {
    fn dim(&self) -> usize {
        self.n
    }

    fn param_dim(&self) -> usize {
        self.n
    }

    fn eq_dim(&self) -> usize {
        1
    }

    fn ineq_dim(&self) -> usize {
        2 * self.n
    }

    fn objective(&self, x: &[f64], c: &[f64]) -> f64 {
        self.value(x, c)
    }

    fn gradient(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        self.grad(x, c)
    }

    fn eq_values(&self, x: &[f64], _c: &[f64]) -> Vec<f64> {
        vec![x.iter().sum::<f64>() - self.k as f64]
    }

    fn eq_jacobian(&self, _x: &[f64], _c: &[f64]) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(1, self.n, |_, _| 1.0)
    }

    fn ineq_values(&self, x: &[f64], _c: &[f64]) -> Vec<f64> {
        x.iter().map(|v| -v).chain(x.iter().map(|v| v - 1.0)).collect()
    }

    fn ineq_jacobian(&self, _x: &[f64], _c: &[f64]) -> DenseMatrix<f64> {
        let n = self.n;
        DenseMatrix::from_fn(2 * n, n, |r, j| {
            if r == j {
                -1.0
            } else if r == n + j {
                1.0
            } else {
                0.0
            }
        })
    }

    fn lagrangian_hessian(&self, x: &[f64], _le: &[f64], _li: &[f64], _c: &[f64]) -> DenseMatrix<f64> {
        let d: Vec<f64> = x.iter().map(|&xi| 1.0 / xi.max(ENTROPY_FLOOR)).collect();
        DenseMatrix::from_diag(&d)
    }

    fn qp_data_vjp(&self, x: &[f64], _le: &[f64], _li: &[f64], _c: &[f64], cot: &QpDataCotangent<f64>) -> QpDataPullback<f64> {
        let n = self.n;
        let gx = (0..n)
            .map(|i| {
                let xi = x[i].max(ENTROPY_FLOOR);
                -cot.hessian[(i, i)] / (xi * xi) + cot.gradient[i] / xi + cot.eq_values[0] - cot.ineq_values[i]
                    + cot.ineq_values[n + i]
            })
            .collect();
        QpDataPullback {
            x: gx,
            lambda_eq: vec![0.0],
            lambda_ineq: vec![0.0; 2 * n],
            c: cot.gradient.iter().map(|v| -v).collect(),
        }
    }
}

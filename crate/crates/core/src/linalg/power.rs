use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::vecops::norm2;
use crate::linalg::LinearOperator;
use crate::Scalar;

/// Dominant-eigenvalue magnitude estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEstimate<T> {
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
}

const WINDOW: usize = 64;

/// Power iteration from a seeded random start vector.
///
/// Each step records the growth ratio `‖A v‖ / ‖v‖`. The reported estimate is the
/// geometric mean of the last two ratios, which is stable when the dominant
/// eigenvalues come as a `±λ` pair. Convergence means two consecutive estimates
/// differ by at most `tol`. Without convergence, the geometric mean of the last
/// `64` ratios is returned instead, which averages out the rotation caused by a
/// complex-conjugate dominant pair.
pub fn power_iteration<T: Scalar, A: LinearOperator<T> + ?Sized>(
    a: &A,
    tol: T,
    max_iter: usize,
    seed: u64,
) -> PowerEstimate<T> {
    let n = a.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<T> = (0..n).map(|_| T::lit(rng.random_range(-1.0..1.0))).collect();
    let nv = norm2(&v);
    if n == 0 || nv == T::zero() {
        return PowerEstimate { value: T::zero(), iterations: 0, converged: true };
    }
    v.iter_mut().for_each(|x| *x /= nv);

    let mut log_ratios: Vec<f64> = Vec::new();
    let mut prev_est: Option<T> = None;
    for it in 1..=max_iter {
        let w = a.apply(&v);
        let nw = norm2(&w);
        if nw == T::zero() {
            return PowerEstimate { value: T::zero(), iterations: it, converged: true };
        }
        if !nw.is_finite() {
            break;
        }
        log_ratios.push(nw.as_f64().ln());
        v = w.into_iter().map(|x| x / nw).collect();

        if log_ratios.len() >= 2 {
            let l = log_ratios.len();
            let est = T::lit(((log_ratios[l - 1] + log_ratios[l - 2]) * 0.5).exp());
            if let Some(p) = prev_est {
                if (est - p).abs() <= tol {
                    return PowerEstimate { value: est, iterations: it, converged: true };
                }
            }
            prev_est = Some(est);
        }
    }

    let tail = &log_ratios[log_ratios.len().saturating_sub(WINDOW)..];
    let value = if tail.is_empty() {
        T::infinity()
    } else {
        T::lit((tail.iter().sum::<f64>() / tail.len() as f64).exp())
    };
    PowerEstimate { value, iterations: log_ratios.len(), converged: false }
}

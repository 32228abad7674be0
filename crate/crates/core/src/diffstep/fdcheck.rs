use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::DiffStep;
use crate::error::{Error, Result};
use crate::linalg::vecops::{dot, norm_inf};
use crate::Scalar;

/// Largest relative discrepancy between analytic and finite-difference pullbacks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VjpReport {
    pub max_rel_err_state: f64,
    pub max_rel_err_param: f64,
    pub probe_count: usize,
}

/// `1e-5·max(1, ‖x‖∞)`
pub fn default_fd_step<T: Scalar>(x: &[T]) -> T {
    T::lit(1e-5) * T::one().max(norm_inf(x))
}

/// Compares both pullbacks of `step` at `(x, c)` against central differences
/// `gᵀ[U(x + heᵢ) − U(x − heᵢ)]/(2h)` for `probes` seeded Gaussian cotangents.
///
/// The relative error of a probe is `‖a − f‖∞ / max(‖a‖∞, ‖f‖∞, 1e-8)`.
pub fn fd_check<T: Scalar, S: DiffStep<T> + ?Sized>(
    step: &S,
    x: &[T],
    c: &[T],
    h: T,
    probes: usize,
    seed: u64,
) -> Result<VjpReport> {
    if !(h > T::zero()) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let m = step.output_dim();
    let jac_x = central_columns(x.len(), h, |i, d| {
        let mut xp = x.to_vec();
        xp[i] += d;
        step.eval(&xp, c)
    })?;
    let jac_c = central_columns(c.len(), h, |i, d| {
        let mut cp = c.to_vec();
        cp[i] += d;
        step.eval(x, &cp)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lin = step.linearize(x, c)?;
    let mut report = VjpReport {
        max_rel_err_state: 0.0,
        max_rel_err_param: 0.0,
        probe_count: probes,
    };
    for _ in 0..probes {
        let g: Vec<T> = (0..m)
            .map(|_| T::lit(StandardNormal.sample(&mut rng)))
            .collect();
        let fd_x: Vec<T> = jac_x.iter().map(|col| dot(&g, col)).collect();
        let fd_c: Vec<T> = jac_c.iter().map(|col| dot(&g, col)).collect();
        let an_x = lin.vjp_state(&g)?;
        let an_c = lin.vjp_param(&g)?;
        report.max_rel_err_state = report.max_rel_err_state.max(rel(&an_x, &fd_x));
        report.max_rel_err_param = report.max_rel_err_param.max(rel(&an_c, &fd_c));
    }
    Ok(report)
}

fn central_columns<T: Scalar>(
    count: usize,
    h: T,
    eval: impl Fn(usize, T) -> Result<Vec<T>>,
) -> Result<Vec<Vec<T>>> {
    (0..count)
        .map(|i| {
            let plus = eval(i, h)?;
            let minus = eval(i, -h)?;
            let inv = T::one() / (h + h);
            Ok(plus.iter().zip(&minus).map(|(&p, &q)| (p - q) * inv).collect())
        })
        .collect()
}

fn rel<T: Scalar>(a: &[T], f: &[T]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let diff = a.iter().zip(f).fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs().as_f64()));
    diff / norm_inf(a).as_f64().max(norm_inf(f).as_f64()).max(1e-8)
}

use foldcore::foldengine::{backprop_gmres, backprop_lfpi, extract_phi, spectral_radius, BackwardOptions, TraceStatus};
use foldcore::linalg::vecops::rel_l1;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::problems::diagnostic;
use crate::{fmt_f, CliError, Report};

pub const SPECTRAL_HEADER: &str = "alpha,rho,rho_dense,predicted_rate,fitted_rate,lfpi_terminal_bwd_err,lfpi_iters_to_tol,gmres_terminal_bwd_err,gmres_iters_to_tol,gmres_status,status";

/// Least-squares slope of `−ln e_k` against `k` over the usable tail of an
/// error trace.
///
/// Entries outside `[1e-12, 1e10]` (round-off floor, divergence cap) are
/// dropped, as is the first quarter of the rest (transient). Returns NaN with
/// fewer than three points left.
pub fn fitted_rate(errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .filter(|(_, &e)| e.is_finite() && (1e-12..=1e10).contains(&e))
        .map(|(k, &e)| (k as f64, -e.ln()))
        .collect();
    let tail = &pts[pts.len() / 4..];
    if tail.len() < 3 {
        return f64::NAN;
    }
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Largest eigenvalue modulus of a dense matrix.
pub(crate) fn dense_spectral_radius(rows: usize, data: &[f64]) -> f64 {
    let m = DMatrix::from_row_slice(rows, rows, data);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

struct Row {
    alpha: f64,
    rho: f64,
    rho_dense: f64,
    fitted: f64,
    lfpi_err: f64,
    lfpi_iters: Option<usize>,
    lfpi_status: TraceStatus,
    gmres_err: f64,
    gmres_iters: Option<usize>,
    gmres_status: TraceStatus,
}

fn row(cfg: &RunConfig, alpha: f64) -> Result<Row, CliError> {
    let d = diagnostic(cfg, alpha)?;
    let rho = spectral_radius(&*d.step, &d.fp, 1e-13, 200_000, cfg.seed)?.value;
    let phi = extract_phi(&*d.step, &d.fp)?;
    let rho_dense = dense_spectral_radius(phi.rows(), phi.as_slice());
    let opts = BackwardOptions::new(cfg.bwd_tol, cfg.max_iter).traced(Some(d.grad_ref.clone()));
    let lfpi = backprop_lfpi(&*d.step, &d.fp, &d.g, &opts)?;
    let (gmres_err, gmres_iters, gmres_status) = match backprop_gmres(&*d.step, &d.fp, &d.g, &opts) {
        Ok(r) => (rel_l1(&r.grad_c, &d.grad_ref), Some(r.iterations), r.trace.status),
        Err(foldcore::Error::SingularSystem { .. }) => (f64::NAN, None, TraceStatus::IterLimit),
        Err(e) => return Err(e.into()),
    };
    Ok(Row {
        alpha,
        rho,
        rho_dense,
        fitted: fitted_rate(&lfpi.trace.errors),
        lfpi_err: lfpi.trace.errors.last().copied().unwrap_or(f64::NAN),
        lfpi_iters: (lfpi.trace.status == TraceStatus::Converged).then_some(lfpi.iterations),
        lfpi_status: lfpi.trace.status,
        gmres_err,
        gmres_iters,
        gmres_status,
    })
}

fn opt(v: Option<usize>) -> String {
    v.map_or_else(|| "NaN".to_string(), |k| k.to_string())
}

/// Spectral radius of `Φ` and LFPI/GMRES backward statistics per stepsize.
pub fn spectral(cfg: &RunConfig) -> Result<Report, CliError> {
    let rows: Vec<Result<Row, CliError>> = cfg.alpha_sweep.par_iter().map(|&a| row(cfg, a)).collect();
    let mut csv = format!("{SPECTRAL_HEADER}\n");
    let mut summary = Vec::new();
    let mut failure = None;
    for (&alpha, r) in cfg.alpha_sweep.iter().zip(rows) {
        match r {
            Ok(r) => {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{}\n",
                    fmt_f(r.alpha),
                    fmt_f(r.rho),
                    fmt_f(r.rho_dense),
                    fmt_f(-r.rho.ln()),
                    fmt_f(r.fitted),
                    fmt_f(r.lfpi_err),
                    opt(r.lfpi_iters),
                    fmt_f(r.gmres_err),
                    opt(r.gmres_iters),
                    r.gmres_status.label(),
                    r.lfpi_status.label()
                ));
                summary.push(json!({
                    "alpha": r.alpha, "rho": r.rho, "rho_dense": r.rho_dense, "fitted_rate": r.fitted,
                    "lfpi_status": r.lfpi_status.label(), "lfpi_iters_to_tol": r.lfpi_iters,
                    "gmres_status": r.gmres_status.label(), "gmres_iters_to_tol": r.gmres_iters,
                }));
            }
            Err(CliError::Config(m)) => return Err(CliError::Config(m)),
            Err(e) => {
                csv.push_str(&format!("{},NaN,NaN,NaN,NaN,NaN,NaN,NaN,NaN,diverged,diverged\n", fmt_f(alpha)));
                summary.push(json!({"alpha": alpha, "error": e.to_string()}));
                failure.get_or_insert(format!("alpha {alpha}: {e}"));
            }
        }
    }
    let mut report = Report::new(
        csv,
        json!({"command": "spectral", "task": cfg.task.to_string(), "seed": cfg.seed, "sweep": summary}),
    );
    report.failure = failure;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fitted_rate_of_geometric_sequence() {
        let errors: Vec<f64> = (0..40).map(|k| 0.5f64.powi(k)).collect();
        assert!((fitted_rate(&errors) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fitted_rate_skips_tiny_errors_and_needs_points() {
        let mut errors: Vec<f64> = (0..20).map(|k| 0.1f64.powi(k)).collect();
        errors.extend([0.0; 10]);
        assert!((fitted_rate(&errors) - 10f64.ln()).abs() < 1e-9);
        assert!(fitted_rate(&[1.0, 0.5]).is_nan());
    }

    #[test]
    fn dense_radius_of_rotation() {
        let r = dense_spectral_radius(2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((r - 0.5).abs() < 1e-12);
    }
}

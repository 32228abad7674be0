use foldcore::foldengine::{
    backprop_gmres, backprop_jacobian, backprop_lfpi, unrolled_backprop, BackwardMode, BackwardOptions, TraceStatus,
    UnrollOptions,
};
use foldcore::linalg::vecops::rel_l1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use super::status_from_error;
use crate::config::{ModeChoice, RunConfig};
use crate::problems::{diagnostic, Diagnostic};
use crate::{fmt_f, CliError, Report};

pub const CONVERGE_HEADER: &str = "alpha,curve,iter,fwd_rel_err,bwd_rel_err,status";

struct Curve {
    name: &'static str,
    /// `(iteration, forward error, backward error)`
    rows: Vec<(usize, f64, f64)>,
    status: TraceStatus,
}

fn unrolled_curve(d: &Diagnostic, cfg: &RunConfig, name: &'static str, starts: &[Vec<f64>]) -> Result<Curve, CliError> {
    let opts = UnrollOptions {
        fwd_reference: Some(d.x_ref.clone()),
        bwd_reference: Some(d.grad_ref.clone()),
        trace_iterates: false,
    };
    let mut fwd = vec![0.0; cfg.iters];
    let mut bwd = vec![0.0; cfg.iters];
    for x0 in starts {
        let run = unrolled_backprop(&*d.step, x0, &d.fp.c, cfg.iters, &d.g, &opts)?;
        for k in 0..cfg.iters {
            fwd[k] += run.fwd_trace[k] / starts.len() as f64;
            bwd[k] += run.bwd_trace[k] / starts.len() as f64;
        }
    }
    let status = status_from_error(bwd[cfg.iters - 1], cfg.bwd_tol);
    Ok(Curve {
        name,
        rows: (0..cfg.iters).map(|k| (k + 1, fwd[k], bwd[k])).collect(),
        status,
    })
}

fn folded_curve(d: &Diagnostic, cfg: &RunConfig, mode: BackwardMode) -> Result<Curve, CliError> {
    let fwd = rel_l1(&d.fp.x_star, &d.x_ref);
    let opts = BackwardOptions::new(cfg.bwd_tol, cfg.iters).traced(Some(d.grad_ref.clone()));
    let (name, result) = match mode {
        BackwardMode::Lfpi => ("lfpi", backprop_lfpi(&*d.step, &d.fp, &d.g, &opts)),
        BackwardMode::Gmres => ("gmres", backprop_gmres(&*d.step, &d.fp, &d.g, &opts)),
        BackwardMode::Jacobian => ("jacobian", backprop_jacobian(&*d.step, &d.fp, &d.g)),
    };
    Ok(match result {
        Ok(r) => {
            let errors = if mode == BackwardMode::Jacobian {
                vec![rel_l1(&r.grad_c, &d.grad_ref)]
            } else {
                r.trace.errors
            };
            Curve {
                name,
                rows: errors.iter().enumerate().map(|(i, &e)| (i + 1, fwd, e)).collect(),
                status: r.trace.status,
            }
        }
        // GMRES reports an unsolved system as an error; the trace shows it as unfinished
        Err(foldcore::Error::SingularSystem { .. }) => Curve {
            name,
            rows: vec![(d.fp.x_star.len(), fwd, f64::NAN)],
            status: TraceStatus::IterLimit,
        },
        Err(e) => return Err(e.into()),
    })
}

fn curves_for(cfg: &RunConfig, alpha: f64, index: usize) -> Result<Vec<Curve>, CliError> {
    let d = diagnostic(cfg, alpha)?;
    let mut out = Vec::new();
    let unrolled = matches!(cfg.mode, None | Some(ModeChoice::Unrolled));
    if unrolled {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
        let starts: Vec<Vec<f64>> = (0..cfg.starts).map(|_| d.random_start(&mut rng)).collect();
        out.push(unrolled_curve(&d, cfg, "unrolled_random", &starts)?);
        out.push(unrolled_curve(&d, cfg, "unrolled_fixed", std::slice::from_ref(&d.fp.x_star))?);
    }
    match cfg.mode {
        None => {
            out.push(folded_curve(&d, cfg, BackwardMode::Lfpi)?);
            out.push(folded_curve(&d, cfg, BackwardMode::Gmres)?);
        }
        Some(ModeChoice::Folded(m)) => out.push(folded_curve(&d, cfg, m)?),
        Some(ModeChoice::Unrolled) => {}
    }
    Ok(out)
}

/// Forward and backward error per iteration for unrolled and folded
/// differentiation, over the stepsize sweep.
pub fn converge(cfg: &RunConfig) -> Result<Report, CliError> {
    let results: Vec<Result<Vec<Curve>, CliError>> = cfg
        .alpha_sweep
        .par_iter()
        .enumerate()
        .map(|(i, &a)| curves_for(cfg, a, i))
        .collect();
    let mut csv = format!("{CONVERGE_HEADER}\n");
    let mut summary = Vec::new();
    let mut failure = None;
    for (&alpha, res) in cfg.alpha_sweep.iter().zip(results) {
        match res {
            Ok(curves) => {
                let mut entry = serde_json::Map::new();
                for c in &curves {
                    for &(k, f, b) in &c.rows {
                        csv.push_str(&format!("{},{},{k},{},{},{}\n", fmt_f(alpha), c.name, fmt_f(f), fmt_f(b), c.status.label()));
                    }
                    let last = c.rows.last().copied().unwrap_or((0, f64::NAN, f64::NAN));
                    entry.insert(
                        c.name.to_string(),
                        json!({"status": c.status.label(), "iterations": last.0, "final_fwd_rel_err": last.1, "final_bwd_rel_err": last.2}),
                    );
                }
                summary.push(json!({"alpha": alpha, "curves": entry}));
            }
            Err(CliError::Config(m)) => return Err(CliError::Config(m)),
            Err(e) => {
                csv.push_str(&format!("{},setup,0,NaN,NaN,diverged\n", fmt_f(alpha)));
                summary.push(json!({"alpha": alpha, "error": e.to_string()}));
                failure.get_or_insert(format!("alpha {alpha}: {e}"));
            }
        }
    }
    let mut report = Report::new(
        csv,
        json!({"command": "converge", "task": cfg.task.to_string(), "seed": cfg.seed, "sweep": summary}),
    );
    report.failure = failure;
    Ok(report)
}

use foldcore::foldengine::{unrolled_backprop, unrolled_backprop_scheduled, TraceStatus, UnrollOptions};
use foldcore::linalg::vecops::rel_l1;
use foldcore::solvers::StepsizePolicy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::status_from_error;
use crate::config::{RunConfig, StepSpec};
use crate::problems::diagnostic;
use crate::{fmt_f, CliError, Report};

pub const POLYAK_HEADER: &str = "run,iter,alpha_k,fwd_rel_err,bwd_rel_err,status";

/// Smallest stepsize handed to the step builder; Polyak steps of exactly zero
/// make the update the bare projection.
const MIN_STEP: f64 = 1e-300;

/// Unrolled PGD under Polyak's rule next to a constant-stepsize run from the
/// same start.
///
/// The Polyak run stops once the forward error reaches `fwd_tol` (or after
/// `max_iter` steps); the constant run is unrolled for the same number of
/// steps, or `iters` if that is larger. Each `αₖ` is treated as a constant
/// during differentiation.
pub fn polyak(cfg: &RunConfig) -> Result<Report, CliError> {
    let alpha = match cfg.stepsize {
        StepSpec::Constant(a) => a,
        StepSpec::Polyak => 0.4,
    };
    let d = diagnostic(cfg, alpha)?;
    let policy = StepsizePolicy::Polyak { f_star: d.f_star };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x0 = d.random_start(&mut rng);

    // forward pass fixes the stepsize schedule and the stopping index
    let mut alphas = Vec::new();
    let mut x = x0.clone();
    let mut reached = false;
    for _ in 0..cfg.max_iter {
        let a = policy.alpha(d.objective.value(&x), &d.objective.grad(&x)).max(MIN_STEP);
        x = d.step_with(a)?.eval(&x, &d.fp.c)?;
        alphas.push(a);
        if rel_l1(&x, &d.x_ref) <= cfg.fwd_tol {
            reached = true;
            break;
        }
    }
    let opts = UnrollOptions {
        fwd_reference: Some(d.x_ref.clone()),
        bwd_reference: Some(d.grad_ref.clone()),
        trace_iterates: false,
    };
    let k_polyak = alphas.len();
    let pol = unrolled_backprop_scheduled(|k, _| Ok(Box::new(d.step_with(alphas[k])?)), &x0, &d.fp.c, k_polyak, &d.g, &opts)?;
    let k_const = k_polyak.max(cfg.iters);
    let con = unrolled_backprop(&*d.step, &x0, &d.fp.c, k_const, &d.g, &opts)?;

    let pol_status = if reached { TraceStatus::Converged } else { TraceStatus::IterLimit };
    let con_bwd = *con.bwd_trace.last().expect("at least one iteration");
    let con_status = status_from_error(con_bwd, cfg.bwd_tol);
    let mut csv = format!("{POLYAK_HEADER}\n");
    for k in 0..k_polyak {
        csv.push_str(&format!(
            "polyak,{},{},{},{},{}\n",
            k + 1,
            fmt_f(alphas[k]),
            fmt_f(pol.fwd_trace[k]),
            fmt_f(pol.bwd_trace[k]),
            pol_status.label()
        ));
    }
    for k in 0..k_const {
        csv.push_str(&format!(
            "constant,{},{},{},{},{}\n",
            k + 1,
            fmt_f(alpha),
            fmt_f(con.fwd_trace[k]),
            fmt_f(con.bwd_trace[k]),
            con_status.label()
        ));
    }
    let fwd = pol.fwd_trace[k_polyak - 1];
    let bwd = pol.bwd_trace[k_polyak - 1];
    let summary = json!({
        "command": "polyak",
        "task": cfg.task.to_string(),
        "seed": cfg.seed,
        "polyak": {"iterations": k_polyak, "status": pol_status.label(), "final_fwd_rel_err": fwd, "final_bwd_rel_err": bwd,
                   "bwd_over_fwd": bwd / fwd, "min_alpha": alphas.iter().copied().fold(f64::INFINITY, f64::min)},
        "constant": {"alpha": alpha, "iterations": k_const, "status": con_status.label(),
                     "final_fwd_rel_err": con.fwd_trace[k_const - 1], "final_bwd_rel_err": con_bwd},
    });
    Ok(Report::new(csv, summary))
}

use std::sync::Arc;

use foldcore::diffstep::{simplex_project, DiffStepExt};
use foldcore::foldengine::{BackwardMode, FixedPoint, FoldedLayer, Oracle};
use foldcore::linalg::vecops::{dot, rel_inf};
use foldcore::solvers::{make_layer_fpgda, make_layer_fpgdb, FileOracle, FnOracle, PolytopeProjection};
use foldcore::tasks::{
    make_denoising_with, make_portfolio_with, make_topk_with, topk_embedding, LayerOptions, TaskInstance, TaskKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{RunConfig, TaskName};
use crate::problems::RandomQp;
use crate::{fmt_f, CliError, Report};

pub const GRADCHECK_HEADER: &str = "task,check,value,tolerance,pass,status";

/// Engine against finite differences.
pub const FD_TOL: f64 = 1e-4;
/// Engine against engine.
pub const PAIR_TOL: f64 = 1e-6;
/// Analytic-projection layer against folded-projection layer.
pub const NESTED_TOL: f64 = 1e-5;

const ENGINES: [(BackwardMode, &str); 3] = [
    (BackwardMode::Lfpi, "lfpi"),
    (BackwardMode::Gmres, "gmres"),
    (BackwardMode::Jacobian, "jacobian"),
];

type Solve = Box<dyn Fn(&[f64]) -> foldcore::Result<Vec<f64>> + Send + Sync>;

/// One differentiable mapping to check: layers sharing a forward map, the
/// exact re-solve for finite differences, and the evaluation point.
struct Case {
    layers: Vec<(&'static str, FoldedLayer<f64>)>,
    exact: Solve,
    c: Vec<f64>,
    fd_step: f64,
    /// Where the data for the evaluation point came from.
    origin: serde_json::Value,
}

fn file_oracle(cfg: &RunConfig, param_dim: usize) -> Result<Option<Arc<dyn Oracle<f64>>>, CliError> {
    let Some(path) = &cfg.oracle_file else { return Ok(None) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read oracle file {}: {e}", path.display())))?;
    Ok(Some(Arc::new(FileOracle::from_csv(&text, param_dim, cfg.fwd_tol)?)))
}

fn layer_opts(cfg: &RunConfig) -> LayerOptions {
    LayerOptions {
        backward_tol: 1e-13,
        backward_max_iter: cfg.max_iter.max(10_000),
        seed: cfg.seed,
        ..LayerOptions::default()
    }
}

fn build(cfg: &RunConfig) -> Result<Case, CliError> {
    let opts = layer_opts(cfg);
    Ok(match cfg.task {
        TaskName::TopK => {
            let task = make_topk_with(cfg.n, cfg.k, 4, cfg.seed)?;
            let TaskKind::TopK(t) = task.kind else { unreachable!() };
            let c = topk_embedding(&t, cfg.seed);
            let layer = match file_oracle(cfg, cfg.n)? {
                Some(o) => {
                    let proj = simplex_project(t.n, t.k as f64)?.shared();
                    make_layer_fpgda(Arc::new(t), proj, opts.alpha, Some(o))?
                }
                None => task.layer(&opts)?,
            };
            Case {
                layers: vec![("topk", layer)],
                exact: Box::new(move |c| Ok(t.solve_exact(c)?.0)),
                c,
                fd_step: 1e-6,
                origin: json!({"seed": cfg.seed}),
            }
        }
        TaskName::Denoising => {
            let task = Arc::new(make_denoising_with(4, cfg.length, cfg.noise, cfg.lambda, cfg.seed)?);
            let TaskKind::Denoising(spec) = &task.kind else { unreachable!() };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
            let dm: Vec<f64> = spec
                .differencing()
                .into_vec()
                .into_iter()
                .map(|v| v + 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let c = task.layer_input(0, &dm);
            let layer = task.layer(&opts)?;
            let t2 = task.clone();
            Case {
                layers: vec![("denoising", layer)],
                exact: Box::new(move |c| t2.decision(c)),
                c,
                fd_step: 1e-6,
                origin: json!({"seed": cfg.seed, "sample": 0}),
            }
        }
        TaskName::Portfolio => {
            let (task, c, origin) = smooth_portfolio_point(cfg)?;
            let task = Arc::new(task);
            let layer = task.layer(&opts)?;
            let t2 = task.clone();
            Case {
                layers: vec![("portfolio", layer)],
                exact: Box::new(move |c| t2.decision(c)),
                c,
                fd_step: 1e-5,
                origin,
            }
        }
        TaskName::Qp => {
            let qp = Arc::new(RandomQp::new(cfg.n, cfg.m, cfg.seed));
            let alpha = qp.safe_alpha();
            let obj = Arc::new(qp.objective.clone());
            let exact_oracle = |qp: Arc<RandomQp>| -> Arc<dyn Oracle<f64>> {
                Arc::new(FnOracle::new(1e-12, move |c: &[f64]| {
                    Ok(FixedPoint {
                        x_star: qp.solve(c)?,
                        c: c.to_vec(),
                        residual: 0.0,
                        iterations: 0,
                    })
                }))
            };
            let oracle = match file_oracle(cfg, cfg.n)? {
                Some(o) => o,
                None => exact_oracle(qp.clone()),
            };
            let proj = PolytopeProjection::new(qp.a.clone(), qp.b.clone())?.shared();
            let a = make_layer_fpgda(obj.clone(), proj, alpha, Some(oracle.clone()))?;
            let b = make_layer_fpgdb(obj, qp.a.clone(), qp.b.clone(), alpha, Some(oracle))?;
            let qp2 = qp.clone();
            Case {
                layers: vec![("fpgda", a), ("fpgdb", b)],
                exact: Box::new(move |c| qp2.solve(c)),
                c: qp.c.clone(),
                fd_step: 1e-6,
                origin: json!({"seed": cfg.seed}),
            }
        }
        TaskName::Bilinear => {
            return Err(CliError::Config(
                "gradcheck needs a locally smooth mapping; the bilinear task's solutions sit on vertices".into(),
            ))
        }
    })
}

/// Data seeds tried after the configured one when looking for a portfolio
/// sample whose solution moves with the prices.
const PORTFOLIO_SEED_TRIES: u64 = 16;
const PORTFOLIO_SAMPLES: usize = 32;

/// The first portfolio sample whose solution holds at least three assets.
///
/// With two assets and a tight risk constraint the solution is pinned by the
/// budget and risk equations, so its derivative is identically zero and a
/// relative comparison says nothing.
fn smooth_portfolio_point(cfg: &RunConfig) -> Result<(TaskInstance, Vec<f64>, serde_json::Value), CliError> {
    for s in cfg.seed..cfg.seed + PORTFOLIO_SEED_TRIES {
        let task = make_portfolio_with(cfg.n, cfg.degree, PORTFOLIO_SAMPLES, s)?;
        for (i, c) in task.data.params.iter().enumerate() {
            if task.decision(c)?.iter().filter(|&&v| v > 1e-7).count() >= 3 {
                let c = c.clone();
                return Ok((task, c, json!({"seed": s, "sample": i})));
            }
        }
    }
    Err(CliError::Config(format!(
        "no portfolio sample with three or more held assets for seeds {}..{}",
        cfg.seed,
        cfg.seed + PORTFOLIO_SEED_TRIES
    )))
}

struct Check {
    name: String,
    value: f64,
    tol: f64,
    status: &'static str,
}

impl Check {
    fn pass(&self) -> bool {
        self.value <= self.tol
    }
}

/// Central differences of `c ↦ gᵀx*(c)` with fresh exact solves.
fn finite_differences(case: &Case, g: &[f64]) -> Result<Vec<f64>, CliError> {
    (0..case.c.len())
        .into_par_iter()
        .map(|j| {
            let h = case.fd_step * case.c[j].abs().max(1.0);
            let mut cp = case.c.clone();
            let mut cm = case.c.clone();
            cp[j] += h;
            cm[j] -= h;
            let fp = dot(g, &(case.exact)(&cp)?);
            let fm = dot(g, &(case.exact)(&cm)?);
            Ok((fp - fm) / (2.0 * h))
        })
        .collect()
}

/// Compares every backward engine with finite differences of the re-solved
/// mapping and with each other.
pub fn gradcheck(cfg: &RunConfig) -> Result<Report, CliError> {
    let case = build(cfg)?;
    let out_dim = case.layers[0].1.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let g: Vec<f64> = (0..out_dim).map(|_| rng.sample(StandardNormal)).collect();
    let fd = finite_differences(&case, &g)?;

    let mut checks = Vec::new();
    let mut grads: Vec<(String, Option<Vec<f64>>)> = Vec::new();
    for (label, layer) in &case.layers {
        for (mode, ename) in ENGINES {
            let name = if case.layers.len() > 1 { format!("{label}/{ename}") } else { ename.to_string() };
            match layer.backward_with(&case.c, &g, mode) {
                Ok(r) => {
                    checks.push(Check {
                        name: format!("{name} vs fd"),
                        value: rel_inf(&r.grad_c, &fd),
                        tol: FD_TOL,
                        status: r.trace.status.label(),
                    });
                    grads.push((name, Some(r.grad_c)));
                }
                Err(e) => {
                    checks.push(Check {
                        name: format!("{name} vs fd ({e})"),
                        value: f64::NAN,
                        tol: FD_TOL,
                        status: "diverged",
                    });
                    grads.push((name, None));
                }
            }
        }
    }
    for i in 0..grads.len() {
        for j in i + 1..grads.len() {
            let (a, b) = (&grads[i], &grads[j]);
            let same_layer = a.0.split('/').next() == b.0.split('/').next() || !a.0.contains('/');
            let tol = if same_layer { PAIR_TOL } else { NESTED_TOL };
            let value = match (&a.1, &b.1) {
                (Some(x), Some(y)) => rel_inf(x, y),
                _ => f64::NAN,
            };
            checks.push(Check {
                name: format!("{} vs {}", a.0, b.0),
                value,
                tol,
                status: if value.is_finite() { "ok" } else { "diverged" },
            });
        }
    }

    let task = cfg.task.to_string();
    let mut csv = format!("{GRADCHECK_HEADER}\n");
    for c in &checks {
        csv.push_str(&format!("{task},{},{},{},{},{}\n", c.name, fmt_f(c.value), fmt_f(c.tol), c.pass(), c.status));
    }
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.pass()).collect();
    let summary = json!({
        "command": "gradcheck",
        "task": task,
        "seed": cfg.seed,
        "point": case.origin,
        "checks": checks.iter().map(|c| json!({"check": c.name, "value": c.value, "tolerance": c.tol, "pass": c.pass()})).collect::<Vec<_>>(),
        "pass": failed.is_empty(),
    });
    let mut report = Report::new(csv, summary);
    if !failed.is_empty() {
        report.failure = Some(format!(
            "{} check(s) above tolerance: {}",
            failed.len(),
            failed.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("; ")
        ));
    }
    Ok(report)
}

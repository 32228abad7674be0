//! Diagnostic problem instances shared by the trace commands.

use std::sync::Arc;

use foldcore::diffstep::{simplex_project, DiffStep, DiffStepExt, QuadraticObjective, SharedStep, SmoothObjective};
use foldcore::foldengine::{backprop_jacobian, FixedPoint, Oracle};
use foldcore::linalg::DenseMatrix;
use foldcore::solvers::{pgd_step, qp_active_set_solve, FileOracle, PolytopeProjection, QpProblem};
use foldcore::tasks::{topk_embedding, EntropyTopK};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{RunConfig, TaskName};
use crate::CliError;

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64> + Send + Sync>;

/// A smooth objective at fixed parameters, used by the Polyak rule.
pub trait ObjectiveAt: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn grad(&self, x: &[f64]) -> Vec<f64>;
}

struct Bound<O> {
    obj: Arc<O>,
    c: Vec<f64>,
}

impl<O: SmoothObjective<f64> + Send + Sync> ObjectiveAt for Bound<O> {
    fn value(&self, x: &[f64]) -> f64 {
        self.obj.value(x, &self.c)
    }
    fn grad(&self, x: &[f64]) -> Vec<f64> {
        self.obj.grad(x, &self.c)
    }
}

/// A PGD fixed-point problem: the folded step at one stepsize, the exact
/// solution, an incoming gradient and its exact pullback.
pub struct Diagnostic {
    pub step: SharedStep<f64>,
    pub fp: FixedPoint<f64>,
    /// Exact solution used as the forward reference.
    pub x_ref: Vec<f64>,
    pub g: Vec<f64>,
    /// `gᵀ ∂x*/∂c` from the direct engine.
    pub grad_ref: Vec<f64>,
    pub objective: Arc<dyn ObjectiveAt>,
    /// `f(x*)`
    pub f_star: f64,
    /// Projection used to rebuild the step at another stepsize.
    projection: SharedStep<f64>,
    rebuild: Box<dyn Fn(f64, SharedStep<f64>) -> foldcore::Result<SharedStep<f64>> + Send + Sync>,
    sampler: Sampler,
}

impl Diagnostic {
    /// A random feasible start.
    pub fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (self.sampler)(rng)
    }

    /// The same problem's PGD step with stepsize `alpha`.
    pub fn step_with(&self, alpha: f64) -> foldcore::Result<SharedStep<f64>> {
        (self.rebuild)(alpha, self.projection.clone())
    }
}

fn normal_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn load_file_oracle(cfg: &RunConfig, param_dim: usize) -> Result<Option<FileOracle<f64>>, CliError> {
    match &cfg.oracle_file {
        None => Ok(None),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read oracle file {}: {e}", path.display())))?;
            Ok(Some(FileOracle::from_csv(&text, param_dim, cfg.fwd_tol)?))
        }
    }
}

fn finish<O>(
    objective: Arc<O>,
    projection: SharedStep<f64>,
    alpha: f64,
    c: Vec<f64>,
    x_exact: Vec<f64>,
    x_used: Vec<f64>,
    seed: u64,
    sampler: Sampler,
) -> Result<Diagnostic, CliError>
where
    O: SmoothObjective<f64> + Send + Sync + 'static,
{
    let step: SharedStep<f64> = pgd_step(objective.clone(), alpha, projection.clone())?.shared();
    let fp = FixedPoint::measure(&*step, x_used, c.clone(), 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37));
    let g = normal_vec(step.state_dim(), &mut rng);
    let exact_fp = FixedPoint::measure(&*step, x_exact.clone(), c.clone(), 0)?;
    let grad_ref = backprop_jacobian(&*step, &exact_fp, &g)?.grad_c;
    let f_star = objective.value(&x_exact, &c);
    let obj2 = objective.clone();
    Ok(Diagnostic {
        step,
        fp,
        x_ref: x_exact,
        g,
        grad_ref,
        objective: Arc::new(Bound { obj: objective, c }),
        f_star,
        projection,
        rebuild: Box::new(move |a, p| Ok(pgd_step(obj2.clone(), a, p)?.shared())),
        sampler,
    })
}

/// Entropic top-k at one seeded embedding.
pub fn topk(cfg: &RunConfig, alpha: f64) -> Result<Diagnostic, CliError> {
    let t = EntropyTopK::new(cfg.n, cfg.k)?;
    let c = topk_embedding(&t, cfg.seed);
    let x_exact = t.solve_exact(&c)?.0;
    let x_used = match load_file_oracle(cfg, cfg.n)? {
        Some(o) => o.solve(&c)?.x_star,
        None => x_exact.clone(),
    };
    let projection = simplex_project(t.n, t.k as f64)?.shared();
    let proj2 = projection.clone();
    let (n, center) = (t.n, t.k as f64 / t.n as f64);
    // the entropy is not smooth at zero, so starts are kept strictly inside
    // the feasible set by averaging with the uniform allocation
    let sampler: Sampler = Box::new(move |rng| {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let p = proj2.eval(&raw, &[]).expect("projection of a finite vector");
        p.into_iter().map(|v| 0.5 * (v + center)).collect()
    });
    finish(Arc::new(t), projection, alpha, c, x_exact, x_used, cfg.seed, sampler)
}

/// A random strictly convex QP over `{Ax = b, x ≥ 0}`.
pub struct RandomQp {
    pub objective: QuadraticObjective<f64>,
    pub a: DenseMatrix<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RandomQp {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mfac = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let mut q = mfac.transpose().matmul(&mfac).scaled(1.0 / n as f64);
        for i in 0..n {
            q.as_mut_slice()[i * n + i] += 0.5;
        }
        let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let x_feas: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let b = a.matvec(&x_feas);
        let c = normal_vec(n, &mut rng);
        Self {
            objective: QuadraticObjective::linear_param(q),
            a,
            b,
            c,
        }
    }

    /// Exact solution by active-set enumeration.
    pub fn solve(&self, c: &[f64]) -> foldcore::Result<Vec<f64>> {
        let qp = QpProblem::new(self.objective.q.clone(), c.to_vec(), self.a.clone(), self.b.clone(), true)?;
        qp_active_set_solve(&qp, 1e-12)
    }

    /// A stepsize safely inside the contraction range, `1/λ_max(Q)`.
    pub fn safe_alpha(&self) -> f64 {
        let q = &self.objective.q;
        let bound = (0..q.rows())
            .map(|i| q.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        1.0 / bound
    }
}

pub fn qp(cfg: &RunConfig, alpha: f64) -> Result<Diagnostic, CliError> {
    let problem = RandomQp::new(cfg.n, cfg.m, cfg.seed);
    let x_exact = problem.solve(&problem.c)?;
    let x_used = match load_file_oracle(cfg, cfg.n)? {
        Some(o) => o.solve(&problem.c)?.x_star,
        None => x_exact.clone(),
    };
    let projection = PolytopeProjection::new(problem.a.clone(), problem.b.clone())?.shared();
    let proj2 = projection.clone();
    let n = cfg.n;
    let sampler: Sampler = Box::new(move |rng| {
        let raw = normal_vec(n, rng);
        proj2.eval(&raw, &[]).expect("projection of a finite vector")
    });
    finish(
        Arc::new(problem.objective),
        projection,
        alpha,
        problem.c,
        x_exact,
        x_used,
        cfg.seed,
        sampler,
    )
}

/// The diagnostic for the configured task at stepsize `alpha`.
pub fn diagnostic(cfg: &RunConfig, alpha: f64) -> Result<Diagnostic, CliError> {
    match cfg.task {
        TaskName::TopK => topk(cfg, alpha),
        TaskName::Qp => qp(cfg, alpha),
        other => Err(CliError::Config(format!(
            "trace commands run projected gradient descent on `topk` or `qp`; `{other}` is not supported here"
        ))),
    }
}

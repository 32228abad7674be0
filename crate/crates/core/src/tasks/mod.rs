//! Synthetic experiment instances, their data generators and the regret loss.
//!
//! Tasks work in `f64`. Each [`TaskInstance`] carries a seeded data set of
//! `(features, ground-truth parameters)` rows split 90/10 into train and test,
//! an exact solver used for evaluation, and a builder for the folded layer
//! trained through.

mod bilinear;
mod csv;
mod denoising;
mod portfolio;
mod portfolio_nlp;
mod topk;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use bilinear::{target_nonlinearity, BilinearSpec, BILINEAR_FEATURES};
pub use csv::{export_csv, import_csv};
pub use denoising::DenoisingSpec;
pub use portfolio::PORTFOLIO_FEATURES;
pub use portfolio_nlp::PortfolioNlp;
pub use topk::{EntropyTopK, ENTROPY_FLOOR};

use crate::diffstep::{capped_simplex_product, simplex_project, DiffStepExt};
use crate::error::{check_dim, Error, Result};
use crate::foldengine::{BackwardMode, FixedPoint, FoldedLayer, Oracle};
use crate::linalg::DenseMatrix;
use crate::solvers::{
    fdpg_solve, make_layer_ffdpg, make_layer_fpgda, make_layer_fsqp, multistart, sqp_solve, FnOracle, PgdOracle, SqpStep,
    DEFAULT_ORACLE_TOL,
};

/// How a decision is scored during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `f(x, c̄) − f(x*(c̄), c̄)`
    Regret,
    /// Mean squared error between the decision and a target decision.
    Mse,
}

/// The optimization problem behind a task.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskKind {
    TopK(EntropyTopK),
    Denoising(DenoisingSpec),
    Portfolio(PortfolioNlp<f64>),
    Bilinear(BilinearSpec),
}

/// Samples with their ground-truth parameters; the first `n_train` rows train.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    /// Ground-truth parameters `c̄` (for denoising, the clean signal).
    pub params: Vec<Vec<f64>>,
    pub n_train: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, params: Vec<Vec<f64>>) -> Result<Self> {
        check_dim("dataset rows", features.len(), params.len())?;
        let n_train = (features.len() * 9).div_ceil(10).min(features.len());
        Ok(Self {
            features,
            params,
            n_train,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn train(&self) -> std::ops::Range<usize> {
        0..self.n_train
    }

    pub fn test(&self) -> std::ops::Range<usize> {
        self.n_train..self.len()
    }
}

/// Settings for [`TaskInstance::layer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerOptions {
    /// PGD/SQP step size.
    pub alpha: f64,
    pub mode: BackwardMode,
    pub backward_tol: f64,
    pub backward_max_iter: usize,
    /// Random starts of the bilinear forward oracle.
    pub starts: usize,
    pub seed: u64,
}

impl Default for LayerOptions {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            mode: BackwardMode::Jacobian,
            backward_tol: 1e-10,
            backward_max_iter: 10_000,
            starts: 8,
            seed: 0,
        }
    }
}

/// A synthetic learning task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub name: String,
    pub kind: TaskKind,
    pub data: Dataset,
    pub loss: LossKind,
    pub seed: u64,
    /// Loss targets per sample, derived from `data.params`.
    targets: Vec<Vec<f64>>,
    /// `f(x*(c̄ᵢ), c̄ᵢ)` per sample for regret tasks.
    optimal: Vec<f64>,
}

impl TaskInstance {
    pub fn new(name: impl Into<String>, kind: TaskKind, data: Dataset, seed: u64) -> Result<Self> {
        let loss = match kind {
            TaskKind::TopK(_) | TaskKind::Denoising(_) => LossKind::Mse,
            TaskKind::Portfolio(_) | TaskKind::Bilinear(_) => LossKind::Regret,
        };
        let mut task = Self {
            name: name.into(),
            kind,
            data,
            loss,
            seed,
            targets: Vec::new(),
            optimal: Vec::new(),
        };
        for (f, p) in task.data.features.iter().zip(&task.data.params) {
            check_dim("task features", task.feature_dim(), f.len())?;
            check_dim("task ground truth", task.truth_dim(), p.len())?;
        }
        task.targets = match &task.kind {
            TaskKind::TopK(t) => task
                .data
                .params
                .iter()
                .map(|c| t.solve_exact(c).map(|s| s.0))
                .collect::<Result<_>>()?,
            _ => task.data.params.clone(),
        };
        if task.loss == LossKind::Regret {
            task.optimal = task
                .data
                .params
                .iter()
                .map(|c| Ok(task.objective(&task.decision(c)?, c)))
                .collect::<Result<_>>()?;
        }
        Ok(task)
    }

    pub fn feature_dim(&self) -> usize {
        match &self.kind {
            TaskKind::TopK(t) => t.n,
            TaskKind::Denoising(d) => d.length,
            TaskKind::Portfolio(_) => PORTFOLIO_FEATURES,
            TaskKind::Bilinear(_) => BILINEAR_FEATURES,
        }
    }

    /// Length of a ground-truth row.
    pub fn truth_dim(&self) -> usize {
        match &self.kind {
            TaskKind::TopK(t) => t.n,
            TaskKind::Denoising(d) => d.length,
            TaskKind::Portfolio(p) => p.n(),
            TaskKind::Bilinear(b) => 2 * b.n(),
        }
    }

    /// Length of what a predictor outputs; denoising predicts only `vec(D)`.
    pub fn prediction_dim(&self) -> usize {
        match &self.kind {
            TaskKind::Denoising(d) => d.rows() * d.length,
            _ => self.truth_dim(),
        }
    }

    /// Length of the layer input `ĉ`.
    pub fn param_dim(&self) -> usize {
        match &self.kind {
            TaskKind::Denoising(d) => d.length + d.rows() * d.length,
            _ => self.truth_dim(),
        }
    }

    pub fn decision_dim(&self) -> usize {
        match &self.kind {
            TaskKind::Bilinear(b) => 2 * b.n(),
            _ => self.truth_dim(),
        }
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i]
    }

    /// Minimization objective `f(x, c)` of the decision problem.
    pub fn objective(&self, x: &[f64], c: &[f64]) -> f64 {
        use crate::diffstep::SmoothObjective;
        use crate::solvers::NlpProblem;
        match &self.kind {
            TaskKind::TopK(t) => t.value(x, c),
            TaskKind::Denoising(d) => {
                let (dvec, dm) = split_denoising(d, c);
                crate::solvers::denoising_objective(&dm, dvec, d.lambda, x)
            }
            TaskKind::Portfolio(p) => p.objective(x, c),
            TaskKind::Bilinear(b) => b.value(x, c),
        }
    }

    /// `∇ₓf(x, c)`; for denoising only the smooth part is differentiated.
    pub fn objective_grad(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        use crate::diffstep::SmoothObjective;
        use crate::solvers::NlpProblem;
        match &self.kind {
            TaskKind::TopK(t) => t.grad(x, c),
            TaskKind::Denoising(d) => x.iter().zip(&c[..d.length]).map(|(a, b)| a - b).collect(),
            TaskKind::Portfolio(p) => p.gradient(x, c),
            TaskKind::Bilinear(b) => b.grad(x, c),
        }
    }

    /// A fresh, high-precision solve of the decision problem at `c`.
    pub fn decision(&self, c: &[f64]) -> Result<Vec<f64>> {
        check_dim("decision parameters", self.param_dim(), c.len())?;
        match &self.kind {
            TaskKind::TopK(t) => Ok(t.solve_exact(c)?.0),
            TaskKind::Denoising(d) => {
                let (dvec, dm) = split_denoising(d, c);
                Ok(fdpg_solve(&dm, dvec, d.lambda, 1e-12, 200_000)?.u)
            }
            TaskKind::Portfolio(p) => {
                let step = SqpStep::new(Arc::new(p.clone()), 1.0)?;
                let (x0, l0) = portfolio_start(p.n());
                let (fp, _) = sqp_solve(&step, c, &x0, &l0, 1e-12, 1000)?;
                Ok(fp.x_star[..p.n()].to_vec())
            }
            TaskKind::Bilinear(b) => b.solve_exact(c),
        }
    }

    /// Training loss of decision `x` for sample `i`.
    pub fn loss(&self, x: &[f64], i: usize) -> Result<f64> {
        match self.loss {
            LossKind::Mse => Ok(mse(x, &self.targets[i])),
            LossKind::Regret => Ok(self.objective(x, &self.data.params[i]) - self.optimal[i]),
        }
    }

    /// `∂loss/∂x` for sample `i`.
    pub fn loss_grad(&self, x: &[f64], i: usize) -> Vec<f64> {
        match self.loss {
            LossKind::Mse => {
                let t = &self.targets[i];
                let s = 2.0 / t.len() as f64;
                x.iter().zip(t).map(|(a, b)| s * (a - b)).collect()
            }
            LossKind::Regret => self.objective_grad(x, &self.data.params[i]),
        }
    }

    /// Regret of the exact decision at layer input `c` against sample `i`.
    ///
    /// Denoising has no decision-quality counterpart and reports NaN.
    pub fn regret_of(&self, i: usize, c: &[f64]) -> Result<f64> {
        match &self.kind {
            TaskKind::Denoising(_) => Ok(f64::NAN),
            TaskKind::TopK(_) => {
                let c_bar = &self.data.params[i];
                let x = self.decision(c)?;
                Ok(self.objective(&x, c_bar) - self.objective(&self.targets[i], c_bar))
            }
            _ => self.loss(&self.decision(c)?, i),
        }
    }

    /// The layer input for sample `i` given predicted parameters (denoising
    /// prepends the noisy signal to the predicted operator).
    pub fn layer_input(&self, i: usize, predicted: &[f64]) -> Vec<f64> {
        match &self.kind {
            TaskKind::Denoising(_) => {
                let mut c = self.data.features[i].clone();
                c.extend_from_slice(predicted);
                c
            }
            _ => predicted.to_vec(),
        }
    }

    /// The folded layer for this task.
    pub fn layer(&self, opts: &LayerOptions) -> Result<FoldedLayer<f64>> {
        let layer = match &self.kind {
            TaskKind::TopK(t) => {
                let t = *t;
                let oracle: Arc<dyn Oracle<f64>> = Arc::new(FnOracle::new(DEFAULT_ORACLE_TOL, move |c: &[f64]| {
                    Ok(FixedPoint {
                        x_star: t.solve_exact(c)?.0,
                        c: c.to_vec(),
                        residual: 0.0,
                        iterations: 0,
                    })
                }));
                let proj = simplex_project(t.n, t.k as f64)?.shared();
                make_layer_fpgda(Arc::new(t), proj, opts.alpha, Some(oracle))?
            }
            TaskKind::Denoising(d) => make_layer_ffdpg(d.length, d.rows(), d.lambda, None)?,
            TaskKind::Portfolio(p) => make_layer_fsqp(Arc::new(p.clone()), 1.0, portfolio_start(p.n()), None)?,
            TaskKind::Bilinear(b) => {
                let n = b.n();
                let proj = capped_simplex_product(&[(n, b.p_mass), (n, b.q_mass)])?.shared();
                let obj = Arc::new(b.clone());
                let mut inner = PgdOracle::new(obj.clone(), proj.clone(), opts.alpha)?;
                inner.max_iter = 20_000;
                let oracle = Arc::new(multistart(inner, opts.starts, opts.seed)?);
                make_layer_fpgda(obj, proj, opts.alpha, Some(oracle))?
            }
        };
        Ok(layer
            .with_mode(opts.mode)
            .with_backward(opts.backward_tol, opts.backward_max_iter))
    }
}

fn split_denoising<'a>(d: &DenoisingSpec, c: &'a [f64]) -> (&'a [f64], DenseMatrix<f64>) {
    let n = d.length;
    let dm = DenseMatrix::from_row_major(d.rows(), n, c[n..].to_vec()).expect("finite operator entries");
    (&c[..n], dm)
}

/// SQP start for portfolios: the uniform allocation, with unit risk multiplier.
pub fn portfolio_start(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut l0 = vec![0.0; n + 2];
    l0[n + 1] = 1.0;
    (vec![1.0 / n as f64; n], l0)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

fn regret_at(task: &TaskInstance, x: &[f64], c_bar: &[f64]) -> Result<f64> {
    let best = task.decision(c_bar)?;
    Ok(task.objective(x, c_bar) - task.objective(&best, c_bar))
}

/// `f(x*(ĉ), c̄) − f(x*(c̄), c̄)` with both decisions from fresh exact solves.
pub fn regret(task: &TaskInstance, c_hat: &[f64], c_bar: &[f64]) -> Result<f64> {
    let x = task.decision(c_hat)?;
    regret_at(task, &x, c_bar)
}

/// Entropic top-k with `samples` synthetic embeddings.
///
/// Features are standard-normal vectors of length `n`; embeddings are a fixed
/// random linear image scaled by 0.05 and shifted so that `ν = 0`. At that
/// scale the top-k PGD step loses contraction near `α = 0.6`.
pub fn make_topk(n_classes: usize, k: usize) -> Result<TaskInstance> {
    make_topk_with(n_classes, k, 200, 0)
}

pub fn make_topk_with(n_classes: usize, k: usize, samples: usize, seed: u64) -> Result<TaskInstance> {
    let t = EntropyTopK::new(n_classes, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = DenseMatrix::from_fn(n_classes, n_classes, |_, _| rng.random_range(-1.0..1.0));
    let mut features = Vec::with_capacity(samples);
    let mut params = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u: Vec<f64> = (0..n_classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f64> = w.matvec(&u).into_iter().map(|v| 0.05 * v).collect();
        params.push(t.normalize(&raw));
        features.push(u);
    }
    TaskInstance::new("topk", TaskKind::TopK(t), Dataset::new(features, params)?, seed)
}

/// One top-k embedding of scale 0.05 with `ν = 0`, for diagnostics.
pub fn topk_embedding(t: &EntropyTopK, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..t.n).map(|_| 0.05 * rng.random_range(-1.0..1.0)).collect();
    t.normalize(&raw)
}

/// Denoising of piecewise-constant signals at `λ = 0.1`; the learnable input is `vec(D)`.
pub fn make_denoising(n_signals: usize, length: usize, noise_sigma: f64, seed: u64) -> Result<TaskInstance> {
    make_denoising_with(n_signals, length, noise_sigma, 0.1, seed)
}

pub fn make_denoising_with(n_signals: usize, length: usize, noise_sigma: f64, lambda: f64, seed: u64) -> Result<TaskInstance> {
    if length < 3 {
        return Err(Error::InvalidArgument("denoising signals need length ≥ 3".into()));
    }
    let (noisy, clean) = denoising::signals(n_signals, length, noise_sigma, seed);
    TaskInstance::new(
        "denoising",
        TaskKind::Denoising(DenoisingSpec { length, lambda }),
        Dataset::new(noisy, clean)?,
        seed,
    )
}

/// Risk-constrained portfolio with prices of the given nonlinearity degree.
pub fn make_portfolio(n_assets: usize, degree: u32, seed: u64) -> Result<TaskInstance> {
    make_portfolio_with(n_assets, degree, 200, seed)
}

pub fn make_portfolio_with(n_assets: usize, degree: u32, samples: usize, seed: u64) -> Result<TaskInstance> {
    if !(1..=3).contains(&degree) {
        return Err(Error::InvalidArgument(format!("degree must be 1, 2 or 3, got {degree}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nlp = portfolio::random_model(n_assets, &mut rng);
    let (features, params) = portfolio::prices(n_assets, degree, samples, &mut rng);
    TaskInstance::new("portfolio", TaskKind::Portfolio(nlp), Dataset::new(features, params)?, seed)
}

/// `spec_count` bilinear programs with `p = 1`, `q = 2` and 200 samples each.
pub fn make_bilinear(n: usize, spec_count: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    make_bilinear_with(n, spec_count, 200, seed)
}

pub fn make_bilinear_with(n: usize, spec_count: usize, samples: usize, seed: u64) -> Result<Vec<TaskInstance>> {
    if n < 2 {
        return Err(Error::InvalidArgument("bilinear programs need n ≥ 2".into()));
    }
    (0..spec_count)
        .map(|s| {
            let mut rng = bilinear::spec_rng(seed, s);
            let (q, features, params) = bilinear::generate(n, samples, &mut rng);
            TaskInstance::new(
                format!("bilinear-{s}"),
                TaskKind::Bilinear(BilinearSpec::new(q, 1.0, 2.0)?),
                Dataset::new(features, params)?,
                seed,
            )
        })
        .collect()
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::{adam_update, sgd_update, AdamState, Optimizer};
use super::predictor::Predictor;
use crate::error::{check_dim, Error, Result};
use crate::foldengine::FoldedLayer;
use crate::tasks::{TaskInstance, TaskKind};

/// Hyperparameters shared by both training loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    /// Seeds the per-epoch shuffle of the training rows.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-2,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_regret: f64,
}

/// Per-epoch curves, plus the evaluation before the first update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub initial: EpochRecord,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().unwrap_or(&self.initial)
    }

    /// CSV with header `epoch,train_loss,test_loss,test_regret`; epoch 0 is the
    /// untrained model.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss,test_regret\n");
        for r in std::iter::once(&self.initial).chain(&self.epochs) {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", r.epoch, r.train_loss, r.test_loss, r.test_regret));
        }
        out
    }
}

/// Where the predictor's output sits inside the layer input.
fn prediction_offset(task: &TaskInstance) -> usize {
    task.param_dim() - task.prediction_dim()
}

fn check_predictor(task: &TaskInstance, predictor: &Predictor) -> Result<()> {
    check_dim("predictor input", task.feature_dim(), predictor.input_dim)?;
    check_dim("predictor output", task.prediction_dim(), predictor.output_dim)
}

/// Task loss of the layer decision for sample `i`.
pub fn pipeline_loss(task: &TaskInstance, predictor: &Predictor, layer: &FoldedLayer<f64>, i: usize) -> Result<f64> {
    let c_hat = predictor.forward(&task.data.features[i])?;
    let x = layer.forward(&task.layer_input(i, &c_hat))?;
    task.loss(&x, i)
}

/// Task loss of sample `i` and its gradient with respect to the predictor
/// parameters, through the layer.
pub fn pipeline_loss_grad(
    task: &TaskInstance,
    predictor: &Predictor,
    layer: &FoldedLayer<f64>,
    i: usize,
) -> Result<(f64, Vec<f64>)> {
    let u = &task.data.features[i];
    let c_hat = predictor.forward(u)?;
    let c = task.layer_input(i, &c_hat);
    let x = layer.forward(&c)?;
    let loss = task.loss(&x, i)?;
    let g_c = layer.backward(&c, &task.loss_grad(&x, i))?.grad_c;
    let g_theta = predictor.vjp(u, &g_c[prediction_offset(task)..])?;
    Ok((loss, g_theta))
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

fn two_stage_loss_grad(task: &TaskInstance, predictor: &Predictor, i: usize) -> Result<(f64, Vec<f64>)> {
    let u = &task.data.features[i];
    let c_hat = predictor.forward(u)?;
    let c_bar = &task.data.params[i];
    let s = 2.0 / c_bar.len() as f64;
    let g: Vec<f64> = c_hat.iter().zip(c_bar).map(|(a, b)| s * (a - b)).collect();
    Ok((mse(&c_hat, c_bar), predictor.vjp(u, &g)?))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

/// Mean exact-decision loss and regret on the test rows.
fn evaluate_test(task: &TaskInstance, predictor: &Predictor, two_stage: bool) -> Result<(f64, f64)> {
    let rows: Vec<(f64, f64)> = task
        .data
        .test()
        .into_par_iter()
        .map(|i| {
            let c_hat = predictor.forward(&task.data.features[i])?;
            let c = task.layer_input(i, &c_hat);
            let regret = task.regret_of(i, &c)?;
            let loss = if two_stage {
                mse(&c_hat, &task.data.params[i])
            } else {
                task.loss(&task.decision(&c)?, i)?
            };
            Ok((loss, regret))
        })
        .collect::<Result<_>>()?;
    let (l, r): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    Ok((mean(&l), mean(&r)))
}

enum OptState {
    Sgd,
    Adam(AdamState),
}

impl OptState {
    fn new(kind: Optimizer, n: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptState::Sgd,
            Optimizer::Adam => OptState::Adam(AdamState::new(n)),
        }
    }

    fn apply(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        match self {
            OptState::Sgd => sgd_update(theta, grad, lr),
            OptState::Adam(s) => adam_update(theta, grad, s, lr, 0.9, 0.999, 1e-8),
        }
    }
}

fn run<F>(task: &TaskInstance, predictor: &mut Predictor, cfg: &TrainConfig, two_stage: bool, sample: F) -> Result<TrainHistory>
where
    F: Fn(&Predictor, usize) -> Result<(f64, Vec<f64>)> + Sync,
{
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let train: Vec<usize> = task.data.train().collect();
    let initial_train = {
        let rows: Vec<f64> = train
            .par_iter()
            .map(|&i| sample(predictor, i).map(|r| r.0))
            .collect::<Result<_>>()?;
        mean(&rows)
    };
    let (test_loss, test_regret) = evaluate_test(task, predictor, two_stage)?;
    let initial = EpochRecord {
        epoch: 0,
        train_loss: initial_train,
        test_loss,
        test_regret,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(cfg.optimizer, predictor.num_params());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut order = train.clone();
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let current: &Predictor = predictor;
            let results: Vec<(f64, Vec<f64>)> = idx.par_iter().map(|&i| sample(current, i)).collect::<Result<_>>()?;
            let mut grad = vec![0.0; predictor.num_params()];
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / results.len() as f64;
            batch_loss *= scale;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            opt.apply(&mut predictor.theta, &grad, cfg.lr)?;
            losses.extend(results.iter().map(|r| r.0));
        }
        let (test_loss, test_regret) = evaluate_test(task, predictor, two_stage)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: mean(&losses),
            test_loss,
            test_regret,
        });
    }
    Ok(TrainHistory { initial, epochs })
}

/// Trains `predictor` on the task loss of the layer's decisions.
///
/// Each sample contributes `∂loss(x*(ĉ))/∂θ`, with the layer supplying
/// `∂x*/∂ĉ`. The training loss is that of the layer decisions; the test loss
/// and regret use fresh exact solves.
pub fn train_decision_focused(
    task: &TaskInstance,
    predictor: &mut Predictor,
    layer: &FoldedLayer<f64>,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    check_predictor(task, predictor)?;
    check_dim("layer parameters", task.param_dim(), layer.param_dim())?;
    run(task, predictor, cfg, false, |p, i| pipeline_loss_grad(task, p, layer, i))
}

/// Fits `predictor` to the ground-truth parameters by mean squared error.
///
/// Train and test losses are that MSE; test regret still comes from exact
/// solves at the predicted parameters.
pub fn train_two_stage(task: &TaskInstance, predictor: &mut Predictor, cfg: &TrainConfig) -> Result<TrainHistory> {
    if matches!(task.kind, TaskKind::Denoising(_)) {
        return Err(Error::UnsupportedProblemShape(
            "two-stage training needs ground-truth parameters; denoising only has clean signals".into(),
        ));
    }
    check_predictor(task, predictor)?;
    run(task, predictor, cfg, true, |p, i| two_stage_loss_grad(task, p, i))
}

use foldcore::foldengine::BackwardMode;
use foldcore::learner::{train_decision_focused, train_two_stage, Predictor, PredictorKind, TrainConfig};
use foldcore::tasks::{
    make_bilinear_with, make_denoising_with, make_portfolio_with, make_topk_with, LayerOptions, TaskInstance, TaskKind,
};
use serde_json::json;

use crate::config::{Baseline, ModeChoice, PredictorChoice, RunConfig, StepSpec, TaskName};
use crate::{CliError, Report};

pub const TRAIN_HEADER: &str = "epoch,train_loss,test_loss,test_regret";

fn build_task(cfg: &RunConfig) -> Result<TaskInstance, CliError> {
    Ok(match cfg.task {
        TaskName::TopK => make_topk_with(cfg.n, cfg.k, cfg.samples, cfg.seed)?,
        TaskName::Denoising => make_denoising_with(cfg.samples, cfg.length, cfg.noise, cfg.lambda, cfg.seed)?,
        TaskName::Portfolio => make_portfolio_with(cfg.n, cfg.degree, cfg.samples, cfg.seed)?,
        TaskName::Bilinear => make_bilinear_with(cfg.n, cfg.spec + 1, cfg.samples, cfg.seed)?
            .pop()
            .expect("spec list is non-empty"),
        TaskName::Qp => return Err(CliError::Config("the qp task has no training data".into())),
    })
}

/// The initial predictor: the differencing operator for denoising, otherwise
/// a freshly initialized network.
pub fn initial_predictor(task: &TaskInstance, choice: PredictorChoice, cfg: &RunConfig) -> Predictor {
    if let TaskKind::Denoising(spec) = &task.kind {
        return Predictor::constant(spec.differencing().into_vec(), task.feature_dim());
    }
    let kind = match choice {
        PredictorChoice::Linear => PredictorKind::Linear,
        PredictorChoice::TwoLayer => PredictorKind::TwoLayer {
            hidden: cfg.hidden,
            activation: cfg.activation,
        },
    };
    Predictor::new(kind, task.feature_dim(), task.prediction_dim(), cfg.seed)
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        lr: cfg.lr,
        optimizer: cfg.optimizer,
        seed: cfg.seed,
    }
}

/// Decision-focused training, optionally with a two-stage baseline written as
/// a second history with the same seed.
pub fn train(cfg: &RunConfig) -> Result<Report, CliError> {
    let task = build_task(cfg)?;
    let mode = match cfg.mode {
        None => BackwardMode::Jacobian,
        Some(ModeChoice::Folded(m)) => m,
        Some(ModeChoice::Unrolled) => {
            return Err(CliError::Config("training differentiates folded layers; choose lfpi, gmres or jacobian".into()))
        }
    };
    let alpha = match cfg.stepsize {
        StepSpec::Constant(a) => a,
        StepSpec::Polyak => return Err(CliError::Config("training layers need a constant stepsize".into())),
    };
    let opts = LayerOptions {
        alpha,
        mode,
        backward_tol: cfg.bwd_tol,
        backward_max_iter: cfg.max_iter,
        seed: cfg.seed,
        ..LayerOptions::default()
    };
    let layer = task.layer(&opts)?;
    let tc = train_config(cfg);
    let mut predictor = initial_predictor(&task, cfg.predictor, cfg);
    let df = train_decision_focused(&task, &mut predictor, &layer, &tc)?;
    let mut summary = json!({
        "command": "train",
        "task": task.name,
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "decision_focused": {"initial": record(&df.initial), "final": record(df.last())},
    });
    let mut report = Report::new(df.to_csv(), serde_json::Value::Null);
    if cfg.baseline == Baseline::TwoStage {
        let mut p2 = initial_predictor(&task, cfg.predictor, cfg);
        let ts = train_two_stage(&task, &mut p2, &tc)?;
        summary["two_stage"] = json!({"initial": record(&ts.initial), "final": record(ts.last())});
        report.extra.push(("two_stage".into(), ts.to_csv()));
    }
    report.summary = summary;
    Ok(report)
}

fn record(r: &foldcore::learner::EpochRecord) -> serde_json::Value {
    json!({"epoch": r.epoch, "train_loss": r.train_loss, "test_loss": r.test_loss, "test_regret": r.test_regret})
}

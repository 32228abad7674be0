//! Small predictors, optimizers and the two training loops.
//!
//! Decision-focused training pushes the task loss of the layer's decision back
//! through the folded layer and into the predictor; two-stage training fits the
//! predictor to the ground-truth parameters by mean squared error. Both report
//! test regret from fresh exact solves.

mod optim;
mod predictor;
mod train;

pub use optim::{adam_update, sgd_update, AdamState, Optimizer};
pub use predictor::{Activation, Predictor, PredictorKind};
pub use train::{
    pipeline_loss, pipeline_loss_grad, train_decision_focused, train_two_stage, EpochRecord, TrainConfig, TrainHistory,
};

//! Gradients through parametric optimization mappings `x*(c)` by fixed-point folding.
//!
//! An iterative solver is described by one differentiable update step
//! `x ← U(x, c)` together with its vector-Jacobian products. Given a solution
//! from any forward oracle, the gradient `gᵀ ∂x*/∂c` is obtained from the linear
//! system `(I − Φ)ᵀ v = g`, `gᵀJ = vᵀΨ`, where `Φ = ∂U/∂x` and `Ψ = ∂U/∂c` at the
//! fixed point. Three interchangeable engines solve that system: linear
//! fixed-point iteration, GMRES and dense Jacobian extraction.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). Task
//! generators and training loops run in `f64`; aliases for the common
//! instantiations live at the crate root.

pub mod diffstep;
pub mod error;
pub mod foldengine;
pub mod learner;
pub mod linalg;
mod scalar;
pub mod solvers;
pub mod tasks;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` dense matrix.
pub type Matrix = linalg::DenseMatrix<f64>;
/// `f64` fixed point record.
pub type FixedPoint = foldengine::FixedPoint<f64>;
/// `f64` gradient result.
pub type GradResult = foldengine::GradResult<f64>;
/// Shared `f64` differentiable step.
pub type Step = std::sync::Arc<dyn diffstep::DiffStep<f64>>;

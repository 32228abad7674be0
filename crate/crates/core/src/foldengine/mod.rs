//! Backward engines for fixed-point folding and the reference unrolled backpropagator.
//!
//! At a fixed point `x* = U(x*, c)` the Jacobian `J = ∂x*/∂c` solves
//! `(I − Φ) J = Ψ`. The pullback `gᵀJ` is `vᵀΨ` with `(I − Φ)ᵀ v = g`, which each
//! engine solves differently:
//!
//! * [`backprop_lfpi`] iterates `vₖ = Φᵀvₖ₋₁ + g` from `v₀ = g`. Its `k`-th partial
//!   output `vₖᵀΨ` coincides with backpropagating `k + 1` unrolled steps started
//!   at `x*`, and it converges at rate `−log ρ(Φ)`.
//! * [`backprop_gmres`] runs unrestarted GMRES on `r ↦ r − Φᵀr`, which converges
//!   in at most `n` steps whenever `I − Φ` is nonsingular.
//! * [`backprop_jacobian`] assembles `Φ` from `n` basis pullbacks and solves
//!   directly. It serves as the ground truth for error traces.

mod engines;
mod layer;
mod unroll;

pub use engines::{
    backprop_gmres, backprop_jacobian, backprop_lfpi, extract_phi, extract_psi, spectral_radius,
    DIVERGENCE_THRESHOLD,
};
pub use layer::{layer_backward, BackwardMode, FoldedLayer, IdentityReadout, Oracle, Readout, SliceReadout};
pub use unroll::{unrolled_backprop, unrolled_backprop_scheduled, UnrollOptions, UnrollResult};

use crate::diffstep::DiffStep;
use crate::error::Result;
use crate::linalg::vecops::{norm_inf, rel_l1, sub};
use crate::Scalar;

/// A solution `x*(c)` with its fixed-point residual `‖U(x*, c) − x*‖∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint<T> {
    pub x_star: Vec<T>,
    pub c: Vec<T>,
    pub residual: T,
    pub iterations: usize,
}

impl<T: Scalar> FixedPoint<T> {
    /// Wraps `x` as a fixed point of `step`, measuring its residual.
    pub fn measure<S: DiffStep<T> + ?Sized>(step: &S, x: Vec<T>, c: Vec<T>, iterations: usize) -> Result<Self> {
        let ux = step.eval(&x, &c)?;
        let residual = norm_inf(&sub(&ux, &x));
        Ok(Self {
            x_star: x,
            c,
            residual,
            iterations,
        })
    }
}

/// Terminal status of an iterative backward (or forward) pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceStatus {
    Converged,
    IterLimit,
    Diverged,
}

impl TraceStatus {
    /// Lower-case label used in CSV output.
    pub fn label(self) -> &'static str {
        match self {
            TraceStatus::Converged => "ok",
            TraceStatus::IterLimit => "iterlimit",
            TraceStatus::Diverged => "diverged",
        }
    }
}

/// Per-iteration record of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrace<T> {
    /// Partial products `gᵀJₖ`, recorded when tracing is on.
    pub iterates: Vec<Vec<T>>,
    /// Relative L1 error of each partial product against the reference gradient.
    pub errors: Vec<T>,
    pub status: TraceStatus,
}

impl<T> BackwardTrace<T> {
    fn bare(status: TraceStatus) -> Self {
        Self {
            iterates: Vec::new(),
            errors: Vec::new(),
            status,
        }
    }
}

/// Output of a backward engine.
#[derive(Debug, Clone, PartialEq)]
pub struct GradResult<T> {
    /// `gᵀ ∂x*/∂c`
    pub grad_c: Vec<T>,
    pub trace: BackwardTrace<T>,
    pub iterations: usize,
}

/// Tolerances and tracing switches shared by the iterative engines.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardOptions<T> {
    pub tol: T,
    pub max_iter: usize,
    /// Record the partial gradient after every iteration.
    pub trace: bool,
    /// Ground-truth gradient for the error trace.
    pub reference: Option<Vec<T>>,
}

impl<T: Scalar> Default for BackwardOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-10),
            max_iter: 10_000,
            trace: false,
            reference: None,
        }
    }
}

impl<T: Scalar> BackwardOptions<T> {
    pub fn new(tol: T, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            ..Self::default()
        }
    }

    pub fn traced(mut self, reference: Option<Vec<T>>) -> Self {
        self.trace = true;
        self.reference = reference;
        self
    }

    fn record(&self, trace: &mut BackwardTrace<T>, grad: &[T]) {
        if let Some(r) = &self.reference {
            trace.errors.push(rel_l1(grad, r));
        }
        trace.iterates.push(grad.to_vec());
    }
}

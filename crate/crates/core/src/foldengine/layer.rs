use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use super::{backprop_gmres, backprop_jacobian, backprop_lfpi, BackwardOptions, FixedPoint, GradResult};
use crate::diffstep::{DiffStep, SharedStep};
use crate::error::{check_dim, Error, Result};
use crate::linalg::vecops::{add_assign, is_zero};
use crate::Scalar;

/// A forward solver returning `x*(c)`, possibly computed outside this crate.
pub trait Oracle<T: Scalar>: Send + Sync {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>>;

    /// Forward tolerance the oracle aims for.
    fn tolerance(&self) -> T;
}

impl<T: Scalar, O: Oracle<T> + ?Sized> Oracle<T> for Arc<O> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        (**self).solve(c)
    }
    fn tolerance(&self) -> T {
        (**self).tolerance()
    }
}

/// Maps the solver state to the layer output, e.g. the primal part of a
/// primal-dual state.
pub trait Readout<T: Scalar>: Send + Sync {
    fn output_dim(&self) -> usize;

    fn apply(&self, state: &[T], c: &[T]) -> Vec<T>;

    /// Returns `(gᵀ∂out/∂state, gᵀ∂out/∂c)`.
    fn vjp(&self, state: &[T], c: &[T], g: &[T]) -> (Vec<T>, Vec<T>);
}

/// The whole state is the output.
#[derive(Debug, Clone, Copy)]
pub struct IdentityReadout {
    pub dim: usize,
}

impl<T: Scalar> Readout<T> for IdentityReadout {
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, state: &[T], _c: &[T]) -> Vec<T> {
        state.to_vec()
    }
    fn vjp(&self, _state: &[T], c: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        (g.to_vec(), vec![T::zero(); c.len()])
    }
}

/// A contiguous slice `state[start..start + len]`.
#[derive(Debug, Clone, Copy)]
pub struct SliceReadout {
    pub start: usize,
    pub len: usize,
    pub state_dim: usize,
}

impl<T: Scalar> Readout<T> for SliceReadout {
    fn output_dim(&self) -> usize {
        self.len
    }
    fn apply(&self, state: &[T], _c: &[T]) -> Vec<T> {
        state[self.start..self.start + self.len].to_vec()
    }
    fn vjp(&self, _state: &[T], c: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let mut gs = vec![T::zero(); self.state_dim];
        gs[self.start..self.start + self.len].copy_from_slice(g);
        (gs, vec![T::zero(); c.len()])
    }
}

/// Which engine solves the differential fixed-point system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackwardMode {
    Lfpi,
    Gmres,
    Jacobian,
}

impl std::str::FromStr for BackwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lfpi" => Ok(Self::Lfpi),
            "gmres" => Ok(Self::Gmres),
            "jacobian" => Ok(Self::Jacobian),
            other => Err(Error::Parse(format!("unknown backward mode `{other}`"))),
        }
    }
}

/// Residuals above this multiple of the oracle tolerance are rejected.
const STALE_FACTOR: f64 = 1e2;
const DEFAULT_CACHE_CAPACITY: usize = 1 << 14;

type CacheKey = Vec<u64>;

/// The differentiable mapping `c ↦ readout(x*(c), c)`.
///
/// Solutions are cached by the exact bit pattern of `c`, so repeated backward
/// calls at the same parameters reuse one forward solve. The cache is cleared
/// wholesale when it reaches its capacity.
pub struct FoldedLayer<T: Scalar> {
    oracle: Arc<dyn Oracle<T>>,
    step: SharedStep<T>,
    readout: Arc<dyn Readout<T>>,
    mode: BackwardMode,
    backward_tol: T,
    backward_max_iter: usize,
    cache: RwLock<HashMap<CacheKey, Arc<FixedPoint<T>>>>,
    cache_capacity: usize,
}

impl<T: Scalar> FoldedLayer<T> {
    pub fn new(oracle: Arc<dyn Oracle<T>>, step: SharedStep<T>) -> Result<Self> {
        check_dim("layer step must be square", step.state_dim(), step.output_dim())?;
        let dim = step.state_dim();
        Ok(Self {
            oracle,
            step,
            readout: Arc::new(IdentityReadout { dim }),
            mode: BackwardMode::Jacobian,
            backward_tol: T::lit(1e-10),
            backward_max_iter: 10_000,
            cache: RwLock::new(HashMap::new()),
            cache_capacity: DEFAULT_CACHE_CAPACITY,
        })
    }

    pub fn with_readout(mut self, readout: Arc<dyn Readout<T>>) -> Self {
        self.readout = readout;
        self
    }

    pub fn with_mode(mut self, mode: BackwardMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_backward(mut self, tol: T, max_iter: usize) -> Self {
        self.backward_tol = tol;
        self.backward_max_iter = max_iter;
        self
    }

    pub fn with_cache_capacity(mut self, capacity: usize) -> Self {
        self.cache_capacity = capacity.max(1);
        self
    }

    pub fn mode(&self) -> BackwardMode {
        self.mode
    }

    pub fn step(&self) -> &SharedStep<T> {
        &self.step
    }

    pub fn oracle(&self) -> &Arc<dyn Oracle<T>> {
        &self.oracle
    }

    pub fn readout(&self) -> &Arc<dyn Readout<T>> {
        &self.readout
    }

    pub fn output_dim(&self) -> usize {
        self.readout.output_dim()
    }

    pub fn param_dim(&self) -> usize {
        self.step.param_dim()
    }

    pub fn backward_options(&self) -> BackwardOptions<T> {
        BackwardOptions::new(self.backward_tol, self.backward_max_iter)
    }

    pub fn clear_cache(&self) {
        self.cache.write().expect("cache lock poisoned").clear();
    }

    fn key(c: &[T]) -> CacheKey {
        c.iter().map(|v| v.as_f64().to_bits()).collect()
    }

    /// Solves (or recalls) the fixed point at `c`, with its residual re-measured
    /// under the layer's own step.
    pub fn solve(&self, c: &[T]) -> Result<Arc<FixedPoint<T>>> {
        check_dim("layer parameters", self.param_dim(), c.len())?;
        let key = Self::key(c);
        if let Some(fp) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(Arc::clone(fp));
        }
        let raw = self.oracle.solve(c)?;
        check_dim("oracle output", self.step.state_dim(), raw.x_star.len())?;
        let fp = Arc::new(FixedPoint::measure(&*self.step, raw.x_star, c.to_vec(), raw.iterations)?);
        let mut cache = self.cache.write().expect("cache lock poisoned");
        if cache.len() >= self.cache_capacity {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&fp));
        Ok(fp)
    }

    /// Layer output at `c`.
    pub fn forward(&self, c: &[T]) -> Result<Vec<T>> {
        let fp = self.solve(c)?;
        Ok(self.readout.apply(&fp.x_star, c))
    }

    /// `gᵀ ∂output/∂c` with the layer's configured engine.
    pub fn backward(&self, c: &[T], g: &[T]) -> Result<GradResult<T>> {
        self.backward_with(c, g, self.mode)
    }

    /// `gᵀ ∂output/∂c` with an explicitly chosen engine.
    pub fn backward_with(&self, c: &[T], g: &[T], mode: BackwardMode) -> Result<GradResult<T>> {
        check_dim("layer cotangent", self.output_dim(), g.len())?;
        let fp = self.solve(c)?;
        let limit = T::lit(STALE_FACTOR) * self.oracle.tolerance();
        if !(fp.residual <= limit) {
            return Err(Error::StaleFixedPoint {
                residual: fp.residual.as_f64(),
                limit: limit.as_f64(),
            });
        }
        let (g_state, g_direct) = self.readout.vjp(&fp.x_star, c, g);
        let mut out = if is_zero(&g_state) {
            GradResult {
                grad_c: vec![T::zero(); c.len()],
                trace: super::BackwardTrace::bare(super::TraceStatus::Converged),
                iterations: 0,
            }
        } else {
            let opts = self.backward_options();
            match mode {
                BackwardMode::Lfpi => backprop_lfpi(&*self.step, &fp, &g_state, &opts)?,
                BackwardMode::Gmres => backprop_gmres(&*self.step, &fp, &g_state, &opts)?,
                BackwardMode::Jacobian => backprop_jacobian(&*self.step, &fp, &g_state)?,
            }
        };
        add_assign(&mut out.grad_c, &g_direct);
        Ok(out)
    }
}

/// Free-function form of [`FoldedLayer::backward`].
pub fn layer_backward<T: Scalar>(layer: &FoldedLayer<T>, c: &[T], g: &[T]) -> Result<GradResult<T>> {
    layer.backward(c, g)
}

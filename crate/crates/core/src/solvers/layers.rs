use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::admm::{admm_qp_solve_with, AdmmFold, AdmmSettings, QpParams};
use super::fdpg::{fdpg_solve, FdpgReadout, FdpgStep};
use super::pgd::{pgd_solve, pgd_step, StepsizePolicy};
use super::qp::QpProblem;
use super::sqp::{sqp_solve, NlpProblem, SqpStep};
use crate::diffstep::{DiffStep, DiffStepExt, Frozen, Linearized, SharedStep, SmoothObjective};
use crate::error::{check_dim, Error, Result};
use crate::foldengine::{FixedPoint, FoldedLayer, Oracle, SliceReadout, TraceStatus};
use crate::linalg::{DenseMatrix, LuFactors};
use crate::Scalar;

/// Forward tolerance of the default oracles.
pub const DEFAULT_ORACLE_TOL: f64 = 1e-10;

/// Oracle defined by a closure.
pub struct FnOracle<T> {
    solve: Box<dyn Fn(&[T]) -> Result<FixedPoint<T>> + Send + Sync>,
    tolerance: T,
}

impl<T: Scalar> FnOracle<T> {
    pub fn new(tolerance: T, solve: impl Fn(&[T]) -> Result<FixedPoint<T>> + Send + Sync + 'static) -> Self {
        Self {
            solve: Box::new(solve),
            tolerance,
        }
    }
}

impl<T: Scalar> Oracle<T> for FnOracle<T> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        (self.solve)(c)
    }
    fn tolerance(&self) -> T {
        self.tolerance
    }
}

/// A solver that can be restarted from a chosen point, as consumed by [`multistart`].
pub trait RestartableSolver<T: Scalar>: Send + Sync {
    fn solve_from(&self, c: &[T], x0: &[T]) -> Result<FixedPoint<T>>;

    fn sample_start(&self, rng: &mut ChaCha8Rng) -> Result<Vec<T>>;

    /// Objective minimized by the solver, used to rank candidate solutions.
    fn objective(&self, x: &[T], c: &[T]) -> T;

    fn tolerance(&self) -> T;
}

/// Projected gradient descent run to tolerance from a fixed start.
pub struct PgdOracle<T: Scalar, O: ?Sized> {
    pub objective: Arc<O>,
    pub projection: SharedStep<T>,
    pub policy: StepsizePolicy<T>,
    pub tol: T,
    pub max_iter: usize,
    pub x0: Vec<T>,
}

impl<T: Scalar, O: SmoothObjective<T> + ?Sized> PgdOracle<T, O> {
    /// Constant step `alpha`, tolerance 1e-10, starting from the projection of the origin.
    pub fn new(objective: Arc<O>, projection: SharedStep<T>, alpha: T) -> Result<Self> {
        let n = objective.dim();
        let pc = vec![T::zero(); projection.param_dim()];
        let x0 = projection.eval(&vec![T::zero(); n], &pc)?;
        Ok(Self {
            objective,
            projection,
            policy: StepsizePolicy::Constant(alpha),
            tol: T::lit(DEFAULT_ORACLE_TOL),
            max_iter: 200_000,
            x0,
        })
    }
}

impl<T: Scalar, O: SmoothObjective<T> + ?Sized> RestartableSolver<T> for PgdOracle<T, O> {
    fn solve_from(&self, c: &[T], x0: &[T]) -> Result<FixedPoint<T>> {
        let out = pgd_solve(&*self.objective, &*self.projection, c, x0, self.policy, self.tol, self.max_iter, None)?;
        Ok(out.fixed_point)
    }

    fn sample_start(&self, rng: &mut ChaCha8Rng) -> Result<Vec<T>> {
        let raw: Vec<T> = (0..self.objective.dim()).map(|_| T::lit(rng.random_range(0.0..1.0))).collect();
        self.projection.eval(&raw, &vec![T::zero(); self.projection.param_dim()])
    }

    fn objective(&self, x: &[T], c: &[T]) -> T {
        self.objective.value(x, c)
    }

    fn tolerance(&self) -> T {
        self.tol
    }
}

impl<T: Scalar, O: SmoothObjective<T> + ?Sized> Oracle<T> for PgdOracle<T, O> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        self.solve_from(c, &self.x0)
    }
    fn tolerance(&self) -> T {
        self.tol
    }
}

/// Best-objective solution over seeded random starts.
pub struct MultiStart<S> {
    solver: S,
    starts: usize,
    seed: u64,
}

/// Wraps `solver` so each solve runs from `starts` random points drawn from a
/// generator seeded with `seed`, keeping the lowest objective (earliest on ties).
pub fn multistart<S>(solver: S, starts: usize, seed: u64) -> Result<MultiStart<S>> {
    if starts == 0 {
        return Err(Error::InvalidArgument("multistart needs at least one start".into()));
    }
    Ok(MultiStart { solver, starts, seed })
}

impl<S> MultiStart<S> {
    pub fn inner(&self) -> &S {
        &self.solver
    }
}

impl<T: Scalar, S: RestartableSolver<T>> Oracle<T> for MultiStart<S> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut best: Option<(T, FixedPoint<T>)> = None;
        let mut last_err = None;
        for _ in 0..self.starts {
            let x0 = self.solver.sample_start(&mut rng)?;
            match self.solver.solve_from(c, &x0) {
                Ok(fp) => {
                    let f = self.solver.objective(&fp.x_star, c);
                    if best.as_ref().is_none_or(|(b, _)| f < *b) {
                        best = Some((f, fp));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        match (best, last_err) {
            (Some((_, fp)), _) => Ok(fp),
            (None, Some(e)) => Err(e),
            (None, None) => unreachable!("at least one start is always attempted"),
        }
    }

    fn tolerance(&self) -> T {
        self.solver.tolerance()
    }
}

/// Solutions computed elsewhere, looked up by the exact bits of `c`.
pub struct FileOracle<T> {
    table: HashMap<Vec<u64>, Vec<T>>,
    state_dim: usize,
    param_dim: usize,
    tolerance: T,
}

impl<T: Scalar> FileOracle<T> {
    /// Builds the table from `(c, x*)` pairs.
    pub fn from_pairs(pairs: Vec<(Vec<T>, Vec<T>)>, tolerance: T) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidArgument("oracle table is empty".into()))?;
        let (param_dim, state_dim) = (first.0.len(), first.1.len());
        let mut table = HashMap::with_capacity(pairs.len());
        for (c, x) in pairs {
            check_dim("oracle table parameters", param_dim, c.len())?;
            check_dim("oracle table solution", state_dim, x.len())?;
            table.insert(key(&c), x);
        }
        Ok(Self {
            table,
            state_dim,
            param_dim,
            tolerance,
        })
    }

    /// Parses CSV rows of `param_dim` parameters followed by the solution.
    /// A first line that does not parse as numbers is taken as a header.
    pub fn from_csv(text: &str, param_dim: usize, tolerance: T) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = line.split(',').map(|f| f.trim().parse::<f64>()).collect();
            let row = match parsed {
                Ok(r) => r,
                Err(_) if pairs.is_empty() && i == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("oracle file line {}: {e}", i + 1))),
            };
            if row.len() <= param_dim {
                return Err(Error::Parse(format!("oracle file line {}: too few columns", i + 1)));
            }
            let row: Vec<T> = row.into_iter().map(T::lit).collect();
            pairs.push((row[..param_dim].to_vec(), row[param_dim..].to_vec()));
        }
        Self::from_pairs(pairs, tolerance)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn param_dim(&self) -> usize {
        self.param_dim
    }
}

fn key<T: Scalar>(c: &[T]) -> Vec<u64> {
    c.iter().map(|v| v.as_f64().to_bits()).collect()
}

impl<T: Scalar> Oracle<T> for FileOracle<T> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        check_dim("oracle table parameters", self.param_dim, c.len())?;
        let x = self
            .table
            .get(&key(c))
            .ok_or_else(|| Error::InvalidArgument("no stored solution for these parameters".into()))?;
        Ok(FixedPoint {
            x_star: x.clone(),
            c: c.to_vec(),
            residual: T::nan(),
            iterations: 0,
        })
    }

    fn tolerance(&self) -> T {
        self.tolerance
    }
}

fn projection_qp<T: Scalar>(a: &DenseMatrix<T>, b: &[T], v: &[T]) -> Result<QpProblem<T>> {
    let n = a.cols();
    QpProblem::new(
        DenseMatrix::identity(n),
        v.iter().map(|&x| -x).collect(),
        a.clone(),
        b.to_vec(),
        true,
    )
}

fn projection_settings<T: Scalar>() -> AdmmSettings<T> {
    AdmmSettings {
        tol: T::lit(1e-13),
        max_iter: 100_000,
        ..AdmmSettings::default()
    }
}

fn check_polytope<T: Scalar>(a: &DenseMatrix<T>, b: &[T]) -> Result<()> {
    if a.rows() != b.len() {
        return Err(Error::UnsupportedProblemShape(format!(
            "constraint matrix has {} rows but {} right-hand sides",
            a.rows(),
            b.len()
        )));
    }
    Ok(())
}

/// Euclidean projection onto `{y : Ay = b, y ≥ 0}` with the closed-form
/// Jacobian `J = P_F(I − A_Fᵀ(A_F A_Fᵀ)⁻¹A_F)P_F` on the positive coordinates `F`.
#[derive(Debug, Clone)]
pub struct PolytopeProjection<T> {
    a: DenseMatrix<T>,
    b: Vec<T>,
}

impl<T: Scalar> PolytopeProjection<T> {
    pub fn new(a: DenseMatrix<T>, b: Vec<T>) -> Result<Self> {
        check_polytope(&a, &b)?;
        Ok(Self { a, b })
    }

    fn project(&self, v: &[T]) -> Result<Vec<T>> {
        let sol = admm_qp_solve_with(&projection_qp(&self.a, &self.b, v)?, &projection_settings(), None)?;
        if sol.status != TraceStatus::Converged {
            return Err(Error::SubproblemInfeasible("polytope projection did not converge".into()));
        }
        Ok(sol.x)
    }
}

impl<T: Scalar> DiffStep<T> for PolytopeProjection<T> {
    fn state_dim(&self) -> usize {
        self.a.cols()
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        crate::diffstep::check_inputs(self, x, c)?;
        self.project(x)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        crate::diffstep::check_inputs(self, x, c)?;
        let y = self.project(x)?;
        let n = y.len();
        let free: Vec<usize> = (0..n).filter(|&i| y[i] > T::zero()).collect();
        let m = self.a.rows();
        let af = DenseMatrix::from_fn(m, free.len(), |r, k| self.a[(r, free[k])]);
        // J restricted to F is I − A_Fᵀ(A_F A_Fᵀ)⁻¹A_F
        let mut jac = DenseMatrix::zeros(n, n);
        for &i in &free {
            jac[(i, i)] = T::one();
        }
        if m > 0 && !free.is_empty() {
            let lu = LuFactors::new(&af.matmul(&af.transpose()))?;
            for (k, &i) in free.iter().enumerate() {
                let w = lu.solve(&af.column(k))?;
                let row = af.matvec_t(&w);
                for (l, &j) in free.iter().enumerate() {
                    jac[(i, j)] -= row[l];
                }
            }
        }
        Ok(Box::new(Frozen {
            out: y,
            out_dim: n,
            state: move |g: &[T]| jac.matvec_t(g),
            param: |_g: &[T]| Vec::new(),
        }))
    }
}

/// The same projection as [`PolytopeProjection`], differentiated by folding the
/// ADMM iteration that computes it.
#[derive(Debug, Clone)]
pub struct FoldedQpProjection<T> {
    a: DenseMatrix<T>,
    b: Vec<T>,
    settings: AdmmSettings<T>,
}

impl<T: Scalar> FoldedQpProjection<T> {
    pub fn new(a: DenseMatrix<T>, b: Vec<T>) -> Result<Self> {
        check_polytope(&a, &b)?;
        Ok(Self {
            a,
            b,
            settings: projection_settings(),
        })
    }

    pub fn with_settings(mut self, settings: AdmmSettings<T>) -> Self {
        self.settings = settings;
        self
    }

    fn fold(&self, v: &[T]) -> Result<AdmmFold<T>> {
        let fold = AdmmFold::solve(projection_qp(&self.a, &self.b, v)?, QpParams::Linear, &self.settings, None)?;
        if fold.solution().status != TraceStatus::Converged {
            return Err(Error::SubproblemInfeasible("polytope projection did not converge".into()));
        }
        Ok(fold)
    }
}

impl<T: Scalar> DiffStep<T> for FoldedQpProjection<T> {
    fn state_dim(&self) -> usize {
        self.a.cols()
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        crate::diffstep::check_inputs(self, x, c)?;
        let sol = admm_qp_solve_with(&projection_qp(&self.a, &self.b, x)?, &self.settings, None)?;
        Ok(sol.x)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        crate::diffstep::check_inputs(self, x, c)?;
        let fold = self.fold(x)?;
        Ok(Box::new(FoldedProjectionPoint {
            out: fold.solution().x.clone(),
            fold,
            m: self.a.rows(),
        }))
    }
}

struct FoldedProjectionPoint<T> {
    fold: AdmmFold<T>,
    out: Vec<T>,
    m: usize,
}

impl<T: Scalar> Linearized<T> for FoldedProjectionPoint<T> {
    fn output(&self) -> &[T] {
        &self.out
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        check_dim("cotangent", self.out.len(), g.len())?;
        // the QP's linear term is p = −v
        let gp = self.fold.pullback(g, &vec![T::zero(); self.m])?;
        Ok(gp.into_iter().map(|v| -v).collect())
    }

    fn vjp_param(&self, _g: &[T]) -> Result<Vec<T>> {
        Ok(Vec::new())
    }
}

fn check_objective<T: Scalar, O: SmoothObjective<T> + ?Sized>(objective: &O, state_dim: usize) -> Result<()> {
    if objective.dim() != state_dim {
        return Err(Error::UnsupportedProblemShape(format!(
            "objective has dimension {} but the feasible set has dimension {}",
            objective.dim(),
            state_dim
        )));
    }
    Ok(())
}

/// Folded PGD with a projection that carries its own closed-form Jacobian.
///
/// Without an `oracle`, the layer solves by constant-step PGD from the
/// projection of the origin to tolerance 1e-10.
pub fn make_layer_fpgda<T, O>(
    objective: Arc<O>,
    projection: SharedStep<T>,
    alpha: T,
    oracle: Option<Arc<dyn Oracle<T>>>,
) -> Result<FoldedLayer<T>>
where
    T: Scalar,
    O: SmoothObjective<T> + 'static,
{
    check_objective(&*objective, projection.state_dim())?;
    let step = pgd_step(objective.clone(), alpha, projection.clone())?;
    let oracle = match oracle {
        Some(o) => o,
        None => Arc::new(PgdOracle::new(objective, projection, alpha)?),
    };
    FoldedLayer::new(oracle, step.shared())
}

/// Folded PGD over `{Ax = b, x ≥ 0}` whose projection is itself differentiated
/// by folding ADMM.
pub fn make_layer_fpgdb<T, O>(
    objective: Arc<O>,
    a: DenseMatrix<T>,
    b: Vec<T>,
    alpha: T,
    oracle: Option<Arc<dyn Oracle<T>>>,
) -> Result<FoldedLayer<T>>
where
    T: Scalar,
    O: SmoothObjective<T> + 'static,
{
    let projection = FoldedQpProjection::new(a, b)?.shared();
    make_layer_fpgda(objective, projection, alpha, oracle)
}

/// Oracle running [`sqp_solve`] from a fixed primal-dual start.
pub struct SqpOracle<T: Scalar, P: ?Sized> {
    pub step: Arc<SqpStep<T, P>>,
    pub x0: Vec<T>,
    pub lambda0: Vec<T>,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar, P: NlpProblem<T> + ?Sized> Oracle<T> for SqpOracle<T, P> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        let (fp, status) = sqp_solve(&*self.step, c, &self.x0, &self.lambda0, self.tol, self.max_iter)?;
        if status != TraceStatus::Converged {
            return Err(Error::SubproblemInfeasible(format!("SQP ended with status {}", status.label())));
        }
        Ok(fp)
    }
    fn tolerance(&self) -> T {
        self.tol
    }
}

/// Folded SQP; the layer output is the primal part of the `(x, λ)` state.
///
/// Without an `oracle`, SQP runs from `(x0, λ0)` to tolerance 1e-10.
pub fn make_layer_fsqp<T, P>(
    problem: Arc<P>,
    alpha: T,
    start: (Vec<T>, Vec<T>),
    oracle: Option<Arc<dyn Oracle<T>>>,
) -> Result<FoldedLayer<T>>
where
    T: Scalar,
    P: NlpProblem<T> + 'static,
{
    let (n, me, mi) = (problem.dim(), problem.eq_dim(), problem.ineq_dim());
    if start.0.len() != n || start.1.len() != me + mi {
        return Err(Error::UnsupportedProblemShape(format!(
            "SQP start has sizes ({}, {}) but the problem needs ({n}, {})",
            start.0.len(),
            start.1.len(),
            me + mi
        )));
    }
    let step = Arc::new(SqpStep::new(problem, alpha)?);
    let oracle = match oracle {
        Some(o) => o,
        None => Arc::new(SqpOracle {
            step: step.clone(),
            x0: start.0,
            lambda0: start.1,
            tol: T::lit(DEFAULT_ORACLE_TOL),
            max_iter: 1000,
        }),
    };
    Ok(FoldedLayer::new(oracle, step)?.with_readout(Arc::new(SliceReadout {
        start: 0,
        len: n,
        state_dim: n + me + mi,
    })))
}

/// Oracle running [`fdpg_solve`] on parameters `[d; vec(D)]`.
#[derive(Debug, Clone, Copy)]
pub struct FdpgOracle<T> {
    pub step: FdpgStep<T>,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Oracle<T> for FdpgOracle<T> {
    fn solve(&self, c: &[T]) -> Result<FixedPoint<T>> {
        let (d, dm) = self.step.unpack(c)?;
        let sol = fdpg_solve(&dm, &d, self.step.lambda, self.tol, self.max_iter)?;
        Ok(sol.fixed_point)
    }
    fn tolerance(&self) -> T {
        self.tol
    }
}

/// Folded FDPG for `min_x ½‖x − d‖² + λ‖Dx‖₁` with `D` of size `m×n`; the layer
/// maps `[d; vec(D)]` to the primal solution.
pub fn make_layer_ffdpg<T: Scalar>(n: usize, m: usize, lambda: T, oracle: Option<Arc<dyn Oracle<T>>>) -> Result<FoldedLayer<T>> {
    if n == 0 {
        return Err(Error::UnsupportedProblemShape("denoising signal must be nonempty".into()));
    }
    let step = FdpgStep::new(n, m, lambda)?;
    let oracle = match oracle {
        Some(o) => o,
        None => Arc::new(FdpgOracle {
            step,
            tol: T::lit(1e-12),
            max_iter: 200_000,
        }),
    };
    Ok(FoldedLayer::new(oracle, step.shared())?.with_readout(Arc::new(FdpgReadout { n, m })))
}

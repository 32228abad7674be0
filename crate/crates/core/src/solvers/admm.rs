use super::qp::{solve_face, QpProblem};
use crate::diffstep::{DiffStep, Linearized};
use crate::error::{check_dim, Error, Result};
use crate::foldengine::{FixedPoint, TraceStatus};
use crate::linalg::vecops::{basis, norm_inf, sub};
use crate::linalg::{DenseMatrix, LuFactors};
use crate::Scalar;

/// Settings for [`admm_qp_solve_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings<T> {
    /// Penalty parameter of the splitting.
    pub rho: T,
    pub tol: T,
    pub max_iter: usize,
    /// Try to finish exactly by solving on the identified active face.
    pub polish: bool,
}

impl<T: Scalar> Default for AdmmSettings<T> {
    fn default() -> Self {
        Self {
            rho: T::one(),
            tol: T::lit(1e-10),
            max_iter: 20_000,
            polish: true,
        }
    }
}

/// Result of an ADMM solve.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmSolution<T> {
    /// Primal solution (the `z` iterate, which satisfies the sign constraints exactly).
    pub x: Vec<T>,
    /// Splitting state `(z, u)`.
    pub state: Vec<T>,
    /// Multipliers of `Ax = b`.
    pub nu: Vec<T>,
    /// Multipliers of the sign constraints, `−ρu`.
    pub bound_duals: Vec<T>,
    pub iterations: usize,
    pub status: TraceStatus,
    pub polished: bool,
    /// `‖U(z, u) − (z, u)‖∞` at the returned state.
    pub residual: T,
}

/// Iterates of one ADMM sweep from `(z, u)`.
struct Sweep<T> {
    x: Vec<T>,
    nu: Vec<T>,
    z: Vec<T>,
    u: Vec<T>,
}

fn sweep<T: Scalar>(qp: &QpProblem<T>, lu: &LuFactors<T>, rho: T, z: &[T], u: &[T]) -> Result<Sweep<T>> {
    let n = qp.n();
    let mut rhs: Vec<T> = (0..n).map(|i| -qp.p[i] + rho * (z[i] - u[i])).collect();
    rhs.extend_from_slice(&qp.b);
    let sol = lu.solve(&rhs)?;
    let x = sol[..n].to_vec();
    let nu = sol[n..].to_vec();
    let mut zn = Vec::with_capacity(n);
    let mut un = Vec::with_capacity(n);
    for i in 0..n {
        let s = x[i] + u[i];
        let zi = if qp.nonneg[i] { s.max(T::zero()) } else { s };
        zn.push(zi);
        un.push(s - zi);
    }
    Ok(Sweep { x, nu, z: zn, u: un })
}

/// ADMM for [`QpProblem`] with default settings apart from `rho`, `tol` and `max_iter`.
pub fn admm_qp_solve<T: Scalar>(qp: &QpProblem<T>, rho: T, tol: T, max_iter: usize) -> Result<AdmmSolution<T>> {
    admm_qp_solve_with(
        qp,
        &AdmmSettings {
            rho,
            tol,
            max_iter,
            polish: true,
        },
        None,
    )
}

/// ADMM on the splitting `x = z`, `f(x) = ½xᵀQx + pᵀx` over `{Ax = b}` and
/// `g(z)` the indicator of the sign constraints. The state is `(z, u)`; `x` and
/// the equality multipliers are recomputed by a KKT solve each sweep. Stops when
/// `max(‖x − z‖∞, ρ‖z⁺ − z‖∞) ≤ tol`.
pub fn admm_qp_solve_with<T: Scalar>(
    qp: &QpProblem<T>,
    settings: &AdmmSettings<T>,
    warm_start: Option<&[T]>,
) -> Result<AdmmSolution<T>> {
    let n = qp.n();
    let rho = settings.rho;
    if !(rho > T::zero()) {
        return Err(Error::InvalidArgument("ADMM penalty must be positive".into()));
    }
    let lu = LuFactors::new(&qp.kkt_matrix(rho))?;
    let (mut z, mut u) = match warm_start {
        Some(s) => {
            check_dim("ADMM warm start", 2 * n, s.len())?;
            (s[..n].to_vec(), s[n..].to_vec())
        }
        None => (vec![T::zero(); n], vec![T::zero(); n]),
    };
    let mut nu = vec![T::zero(); qp.m()];
    let mut status = TraceStatus::IterLimit;
    let mut iterations = 0;
    let polish_trigger = T::lit(1e-4);
    for k in 1..=settings.max_iter {
        let s = sweep(qp, &lu, rho, &z, &u)?;
        let primal = norm_inf(&sub(&s.x, &s.z));
        let dual = rho * norm_inf(&sub(&s.z, &z));
        let res = primal.max(dual);
        z = s.z;
        u = s.u;
        nu = s.nu;
        iterations = k;
        if !res.is_finite() {
            return Err(Error::SubproblemInfeasible("ADMM iterates became non-finite".into()));
        }
        if res <= settings.tol {
            status = TraceStatus::Converged;
            break;
        }
        if settings.polish && res <= polish_trigger && k % 10 == 0 {
            if let Some(sol) = try_polish(qp, &lu, settings, &z, &u, iterations) {
                return Ok(sol);
            }
        }
    }
    if settings.polish {
        if let Some(sol) = try_polish(qp, &lu, settings, &z, &u, iterations) {
            return Ok(sol);
        }
    }
    let residual = state_residual(qp, &lu, rho, &z, &u)?;
    Ok(AdmmSolution {
        x: z.clone(),
        bound_duals: u.iter().map(|&v| -rho * v).collect(),
        state: [z, u].concat(),
        nu,
        iterations,
        status,
        polished: false,
        residual,
    })
}

fn state_residual<T: Scalar>(qp: &QpProblem<T>, lu: &LuFactors<T>, rho: T, z: &[T], u: &[T]) -> Result<T> {
    let s = sweep(qp, lu, rho, z, u)?;
    Ok(norm_inf(&sub(&s.z, z)).max(norm_inf(&sub(&s.u, u))))
}

/// Solves on the face pinned by the current iterate and accepts the result if it
/// is an ADMM fixed point to within the tolerance.
fn try_polish<T: Scalar>(
    qp: &QpProblem<T>,
    lu: &LuFactors<T>,
    settings: &AdmmSettings<T>,
    z: &[T],
    u: &[T],
    iterations: usize,
) -> Option<AdmmSolution<T>> {
    let rho = settings.rho;
    let pinned: Vec<bool> = (0..qp.n())
        .map(|i| qp.nonneg[i] && z[i] == T::zero() && u[i] < T::zero())
        .collect();
    let face = solve_face(qp, &pinned).ok()?;
    let slack = T::lit(1e-12) * T::one().max(norm_inf(&face.x));
    let mut zp = face.x.clone();
    let mut up = vec![T::zero(); qp.n()];
    for i in 0..qp.n() {
        if pinned[i] {
            if face.reduced_grad[i] < -slack {
                return None;
            }
            zp[i] = T::zero();
            up[i] = -face.reduced_grad[i].max(T::zero()) / rho;
        } else if qp.nonneg[i] {
            if zp[i] < -slack {
                return None;
            }
            zp[i] = zp[i].max(T::zero());
        }
    }
    let residual = state_residual(qp, lu, rho, &zp, &up).ok()?;
    if !(residual <= settings.tol) {
        return None;
    }
    Some(AdmmSolution {
        x: zp.clone(),
        bound_duals: up.iter().map(|&v| -rho * v).collect(),
        state: [zp, up].concat(),
        nu: face.nu,
        iterations,
        status: TraceStatus::Converged,
        polished: true,
        residual,
    })
}

/// Which QP data the ADMM step treats as parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpParams {
    /// Only the linear term `p`.
    Linear,
    /// Everything, packed as `[vec(Q); p; vec(A); b]` (row-major).
    Full,
}

/// One ADMM sweep as a differentiable step on the state `(z, u)`.
#[derive(Debug, Clone)]
pub struct AdmmStep<T> {
    base: QpProblem<T>,
    rho: T,
    layout: QpParams,
}

impl<T: Scalar> AdmmStep<T> {
    /// `base` supplies the data not covered by `layout` and the sign mask.
    pub fn new(base: QpProblem<T>, rho: T, layout: QpParams) -> Self {
        Self { base, rho, layout }
    }

    pub fn rho(&self) -> T {
        self.rho
    }

    pub fn layout(&self) -> QpParams {
        self.layout
    }

    pub fn base(&self) -> &QpProblem<T> {
        &self.base
    }

    /// Parameter vector describing `qp` under this step's layout.
    pub fn pack(&self, qp: &QpProblem<T>) -> Vec<T> {
        match self.layout {
            QpParams::Linear => qp.p.clone(),
            QpParams::Full => {
                let mut out = qp.q.as_slice().to_vec();
                out.extend_from_slice(&qp.p);
                out.extend_from_slice(qp.a.as_slice());
                out.extend_from_slice(&qp.b);
                out
            }
        }
    }

    /// The QP described by the parameter vector `c`.
    pub fn unpack(&self, c: &[T]) -> Result<QpProblem<T>> {
        check_dim("ADMM step parameters", self.param_dim(), c.len())?;
        let (n, m) = (self.base.n(), self.base.m());
        match self.layout {
            QpParams::Linear => Ok(QpProblem {
                p: c.to_vec(),
                ..self.base.clone()
            }),
            QpParams::Full => {
                let mut off = 0;
                let mut take = |len: usize| {
                    let s = c[off..off + len].to_vec();
                    off += len;
                    s
                };
                let q = take(n * n);
                let p = take(n);
                let a = take(m * n);
                let b = take(m);
                Ok(QpProblem {
                    q: DenseMatrix::from_row_major(n, n, q)?,
                    p,
                    a: DenseMatrix::from_row_major(m, n, a)?,
                    b,
                    nonneg: self.base.nonneg.clone(),
                })
            }
        }
    }

    /// Linearization of the KKT solve at `(z, u)` for parameters `c`.
    pub fn kkt_point(&self, state: &[T], c: &[T]) -> Result<KktPoint<T>> {
        let n = self.base.n();
        check_dim("ADMM state", 2 * n, state.len())?;
        let qp = self.unpack(c)?;
        let lu = LuFactors::new(&qp.kkt_matrix(self.rho))?;
        let (z, u) = state.split_at(n);
        let s = sweep(&qp, &lu, self.rho, z, u)?;
        Ok(KktPoint {
            lu,
            n,
            m: qp.m(),
            rho: self.rho,
            layout: self.layout,
            x: s.x,
            nu: s.nu,
            next: [s.z, s.u].concat(),
            u: u.to_vec(),
            nonneg: qp.nonneg,
        })
    }
}

/// A KKT solve `[x; ν] = K⁻¹[−p + ρ(z − u); b]` frozen at one point.
pub struct KktPoint<T> {
    lu: LuFactors<T>,
    n: usize,
    m: usize,
    rho: T,
    layout: QpParams,
    pub x: Vec<T>,
    pub nu: Vec<T>,
    /// `U(z, u)`
    pub next: Vec<T>,
    /// The `u` half of the state, kept to recover `s = x + u`.
    u: Vec<T>,
    nonneg: Vec<bool>,
}

impl<T: Scalar> KktPoint<T> {
    /// Pulls `(g_x, g_ν)` back through the KKT solve, returning `(g_state, g_params)`.
    pub fn pullback(&self, g_x: &[T], g_nu: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let (n, m) = (self.n, self.m);
        let mut rhs = g_x.to_vec();
        rhs.extend_from_slice(g_nu);
        let w = self.lu.solve_transpose(&rhs)?;
        let (wx, wn) = w.split_at(n);
        let mut g_state = vec![T::zero(); 2 * n];
        for i in 0..n {
            g_state[i] = self.rho * wx[i];
            g_state[n + i] = -self.rho * wx[i];
        }
        let g_p: Vec<T> = wx.iter().map(|&v| -v).collect();
        let g_c = match self.layout {
            QpParams::Linear => g_p,
            QpParams::Full => {
                let mut out = Vec::with_capacity(n * n + n + m * n + m);
                for i in 0..n {
                    for j in 0..n {
                        out.push(-wx[i] * self.x[j]);
                    }
                }
                out.extend_from_slice(&g_p);
                for r in 0..m {
                    for j in 0..n {
                        out.push(-self.nu[r] * wx[j] - wn[r] * self.x[j]);
                    }
                }
                out.extend_from_slice(wn);
                out
            }
        };
        Ok((g_state, g_c))
    }

    fn step_pullback(&self, g: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let n = self.n;
        check_dim("cotangent", 2 * n, g.len())?;
        let mut g_s = vec![T::zero(); n];
        for i in 0..n {
            let s = self.x[i] + self.u[i];
            let pass = !self.nonneg[i] || s > T::zero();
            g_s[i] = if pass { g[i] } else { g[n + i] };
        }
        let (mut g_state, g_c) = self.pullback(&g_s, &vec![T::zero(); self.m])?;
        for i in 0..n {
            g_state[n + i] += g_s[i];
        }
        Ok((g_state, g_c))
    }
}

impl<T: Scalar> Linearized<T> for KktPoint<T> {
    fn output(&self) -> &[T] {
        &self.next
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        Ok(self.step_pullback(g)?.0)
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        Ok(self.step_pullback(g)?.1)
    }
}

impl<T: Scalar> DiffStep<T> for AdmmStep<T> {
    fn state_dim(&self) -> usize {
        2 * self.base.n()
    }

    fn param_dim(&self) -> usize {
        let (n, m) = (self.base.n(), self.base.m());
        match self.layout {
            QpParams::Linear => n,
            QpParams::Full => n * n + n + m * n + m,
        }
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        Ok(self.kkt_point(x, c)?.next)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        Ok(Box::new(self.kkt_point(x, c)?))
    }
}

/// A solved QP whose solution map is differentiated by folding the ADMM step.
///
/// The differential system `(I − Φ)ᵀ v = ·` of the ADMM fixed point is factored
/// once, so repeated pullbacks cost two triangular solves plus one KKT solve.
pub struct AdmmFold<T> {
    step: AdmmStep<T>,
    params: Vec<T>,
    solution: AdmmSolution<T>,
    point: KktPoint<T>,
    system: LuFactors<T>,
}

impl<T: Scalar> AdmmFold<T> {
    /// Solves `qp` and prepares its differential system under `layout`.
    pub fn solve(qp: QpProblem<T>, layout: QpParams, settings: &AdmmSettings<T>, warm: Option<&[T]>) -> Result<Self> {
        let solution = admm_qp_solve_with(&qp, settings, warm)?;
        let step = AdmmStep::new(qp, settings.rho, layout);
        let params = step.pack(step.base());
        let point = step.kkt_point(&solution.state, &params)?;
        let dim = 2 * step.base().n();
        let mut system = DenseMatrix::identity(dim);
        for i in 0..dim {
            let row = point.vjp_state(&basis(dim, i))?;
            for (j, v) in row.into_iter().enumerate() {
                system[(i, j)] -= v;
            }
        }
        let system = LuFactors::new(&system)?;
        Ok(Self {
            step,
            params,
            solution,
            point,
            system,
        })
    }

    pub fn solution(&self) -> &AdmmSolution<T> {
        &self.solution
    }

    /// `x` and `ν` read from the KKT solve at the fixed point.
    pub fn primal(&self) -> &[T] {
        &self.point.x
    }

    pub fn multipliers(&self) -> &[T] {
        &self.point.nu
    }

    pub fn step(&self) -> &AdmmStep<T> {
        &self.step
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// The fixed point as a [`FixedPoint`] of the ADMM step.
    pub fn fixed_point(&self) -> Result<FixedPoint<T>> {
        FixedPoint::measure(
            &self.step,
            self.solution.state.clone(),
            self.params.clone(),
            self.solution.iterations,
        )
    }

    /// Gradient on the QP parameters of a loss with cotangents `(g_x, g_ν)` on the
    /// primal solution and the equality multipliers.
    pub fn pullback(&self, g_x: &[T], g_nu: &[T]) -> Result<Vec<T>> {
        let (g_state, mut g_c) = self.point.pullback(g_x, g_nu)?;
        if g_state.iter().all(|v| *v == T::zero()) {
            return Ok(g_c);
        }
        let v = self.system.solve_transpose(&g_state)?;
        for (o, w) in g_c.iter_mut().zip(self.point.vjp_param(&v)?) {
            *o += w;
        }
        Ok(g_c)
    }
}

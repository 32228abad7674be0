use crate::diffstep::{shrink, DiffStep, Linearized};
use crate::error::{check_dim, Error, Result};
use crate::foldengine::{FixedPoint, Readout, TraceStatus};
use crate::linalg::vecops::{norm_inf, sub};
use crate::linalg::{power_iteration, DenseMatrix, FnOperator, LuFactors};
use crate::Scalar;

/// The stationary FDPG step for `min_x ½‖x − d‖² + λ‖Dx‖₁` on the dual state `(y, w)`:
///
/// ```text
/// u  = Dᵀw + d
/// y⁺ = w − Du/L + T_{Lλ}(Du − Lw)/L
/// w⁺ = 2y⁺ − y
/// ```
///
/// This is the accelerated iteration with its momentum coefficient at its
/// limit value 1. Parameters are `[d; vec(D)]` with `D` stored row-major
/// (`m×n`), so `param_dim = n + m·n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdpgStep<T> {
    pub n: usize,
    pub m: usize,
    pub lambda: T,
    /// Step constant `L`, an upper bound on `‖D‖₂²` (4 for a differencing matrix).
    pub lipschitz: T,
}

impl<T: Scalar> FdpgStep<T> {
    pub fn new(n: usize, m: usize, lambda: T) -> Result<Self> {
        if !(lambda >= T::zero()) {
            return Err(Error::InvalidArgument("regularization weight must be nonnegative".into()));
        }
        Ok(Self {
            n,
            m,
            lambda,
            lipschitz: T::lit(4.0),
        })
    }

    pub fn with_lipschitz(mut self, l: T) -> Self {
        self.lipschitz = l;
        self
    }

    /// Packs `[d; vec(D)]`.
    pub fn pack(d: &[T], dm: &DenseMatrix<T>) -> Vec<T> {
        let mut c = d.to_vec();
        c.extend_from_slice(dm.as_slice());
        c
    }

    /// Splits the parameter vector into `(d, D)`.
    pub fn unpack(&self, c: &[T]) -> Result<(Vec<T>, DenseMatrix<T>)> {
        check_dim("FDPG parameters", self.n + self.m * self.n, c.len())?;
        let d = c[..self.n].to_vec();
        let dm = DenseMatrix::from_row_major(self.m, self.n, c[self.n..].to_vec())?;
        Ok((d, dm))
    }

    fn forward(&self, state: &[T], c: &[T]) -> Result<FdpgPoint<T>> {
        check_dim("FDPG state", 2 * self.m, state.len())?;
        let (d, dm) = self.unpack(c)?;
        let (y, w) = state.split_at(self.m);
        let l = self.lipschitz;
        let mut u = dm.matvec_t(w);
        for (ui, di) in u.iter_mut().zip(&d) {
            *ui += *di;
        }
        let du = dm.matvec(&u);
        let thr = l * self.lambda;
        let mut next = vec![T::zero(); 2 * self.m];
        let mut mask = vec![false; self.m];
        for i in 0..self.m {
            let q = du[i] - l * w[i];
            mask[i] = q.abs() > thr;
            let t = shrink(q, thr);
            let yn = w[i] - du[i] / l + t / l;
            next[i] = yn;
            next[self.m + i] = yn + yn - y[i];
        }
        Ok(FdpgPoint {
            dm,
            w: w.to_vec(),
            u,
            mask,
            next,
            lipschitz: l,
        })
    }
}

struct FdpgPoint<T> {
    dm: DenseMatrix<T>,
    w: Vec<T>,
    u: Vec<T>,
    mask: Vec<bool>,
    next: Vec<T>,
    lipschitz: T,
}

impl<T: Scalar> FdpgPoint<T> {
    /// Returns `(g_y, g_w, g_d, g_D)`.
    fn pullback(&self, g: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>, DenseMatrix<T>)> {
        let m = self.w.len();
        let n = self.u.len();
        check_dim("cotangent", 2 * m, g.len())?;
        let inv_l = T::one() / self.lipschitz;
        let (gy_out, gw_out) = g.split_at(m);
        let g_y: Vec<T> = gw_out.iter().map(|&v| -v).collect();
        let mut g_w = vec![T::zero(); m];
        let mut g_du = vec![T::zero(); m];
        for i in 0..m {
            let gbar = gy_out[i] + gw_out[i] + gw_out[i];
            g_w[i] += gbar;
            g_du[i] -= gbar * inv_l;
            if self.mask[i] {
                let g_q = gbar * inv_l;
                g_du[i] += g_q;
                g_w[i] -= self.lipschitz * g_q;
            }
        }
        let g_u = self.dm.matvec_t(&g_du);
        let g_dm = DenseMatrix::from_fn(m, n, |i, j| g_du[i] * self.u[j] + self.w[i] * g_u[j]);
        let dgu = self.dm.matvec(&g_u);
        for i in 0..m {
            g_w[i] += dgu[i];
        }
        Ok((g_y, g_w, g_u, g_dm))
    }
}

impl<T: Scalar> Linearized<T> for FdpgPoint<T> {
    fn output(&self) -> &[T] {
        &self.next
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        let (g_y, g_w, _, _) = self.pullback(g)?;
        Ok([g_y, g_w].concat())
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        let (_, _, g_d, g_dm) = self.pullback(g)?;
        let mut out = g_d;
        out.extend_from_slice(g_dm.as_slice());
        Ok(out)
    }
}

impl<T: Scalar> DiffStep<T> for FdpgStep<T> {
    fn state_dim(&self) -> usize {
        2 * self.m
    }

    fn param_dim(&self) -> usize {
        self.n + self.m * self.n
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        Ok(self.forward(x, c)?.next)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        Ok(Box::new(self.forward(x, c)?))
    }
}

/// Primal readout `u = Dᵀw + d` of the FDPG dual state.
#[derive(Debug, Clone, Copy)]
pub struct FdpgReadout {
    pub n: usize,
    pub m: usize,
}

impl<T: Scalar> Readout<T> for FdpgReadout {
    fn output_dim(&self) -> usize {
        self.n
    }

    fn apply(&self, state: &[T], c: &[T]) -> Vec<T> {
        let w = &state[self.m..];
        let d = &c[..self.n];
        (0..self.n)
            .map(|j| d[j] + (0..self.m).map(|i| c[self.n + i * self.n + j] * w[i]).sum::<T>())
            .collect()
    }

    fn vjp(&self, state: &[T], c: &[T], g: &[T]) -> (Vec<T>, Vec<T>) {
        let (n, m) = (self.n, self.m);
        let w = &state[m..];
        let mut g_state = vec![T::zero(); 2 * m];
        for i in 0..m {
            g_state[m + i] = (0..n).map(|j| c[n + i * n + j] * g[j]).sum();
        }
        let mut g_c = g.to_vec();
        for i in 0..m {
            for j in 0..n {
                g_c.push(w[i] * g[j]);
            }
        }
        (g_state, g_c)
    }
}

/// Result of [`fdpg_solve`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdpgSolution<T> {
    /// Dual fixed point `(y, w)` of the stationary step, with parameters `[d; vec(D)]`.
    pub fixed_point: FixedPoint<T>,
    /// Primal solution `u = Dᵀw + d`.
    pub u: Vec<T>,
    pub status: TraceStatus,
    pub polished: bool,
    /// Step constant the solve used.
    pub lipschitz: T,
}

/// Denoising objective `½‖x − d‖² + λ‖Dx‖₁`.
pub fn denoising_objective<T: Scalar>(dm: &DenseMatrix<T>, d: &[T], lambda: T, x: &[T]) -> T {
    let fit: T = x.iter().zip(d).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let tv: T = dm.matvec(x).iter().map(|v| v.abs()).sum();
    T::lit(0.5) * fit + lambda * tv
}

/// Accelerated dual proximal gradient for `min_x ½‖x − d‖² + λ‖Dx‖₁`.
///
/// Runs the momentum iteration with `t₀ = 1`, `w₀ = y₀ = 0` and step constant
/// `L = max(4, ‖D‖₂²)`. Every 25 iterations the bound-active dual coordinates are
/// read off the iterate and the dual problem is solved exactly on that face;
/// the face solution is accepted once it is a fixed point of the stationary
/// step to `tol`. Without a successful polish the iteration ends once both
/// `‖yₖ₊₁ − yₖ‖∞` and the stationary residual at `(yₖ₊₁, yₖ₊₁)` are within
/// `tol`, or after `max_iter` steps.
pub fn fdpg_solve<T: Scalar>(dm: &DenseMatrix<T>, d: &[T], lambda: T, tol: T, max_iter: usize) -> Result<FdpgSolution<T>> {
    let (m, n) = (dm.rows(), dm.cols());
    check_dim("fdpg_solve: signal", n, d.len())?;
    let op = FnOperator::new(m, |v: &[T]| dm.matvec(&dm.matvec_t(v)));
    let norm_sq = power_iteration(&op, T::lit(1e-10), 10_000, 17).value;
    let l = T::lit(4.0).max(norm_sq * T::lit(1.0001));
    let step = FdpgStep::new(n, m, lambda)?.with_lipschitz(l);
    let c = FdpgStep::pack(d, dm);

    let finish = |state: Vec<T>, iterations: usize, status, polished| -> Result<FdpgSolution<T>> {
        let u = FdpgReadout { n, m }.apply(&state, &c);
        Ok(FdpgSolution {
            fixed_point: FixedPoint::measure(&step, state, c.clone(), iterations)?,
            u,
            status,
            polished,
            lipschitz: l,
        })
    };

    if m == 0 || lambda == T::zero() || dm.max_abs() == T::zero() {
        return finish(vec![T::zero(); 2 * m], 0, TraceStatus::Converged, false);
    }

    let mut y = vec![T::zero(); m];
    let mut w = vec![T::zero(); m];
    let mut t = T::one();
    for k in 1..=max_iter {
        let state = [y.clone(), w.clone()].concat();
        let yn = step.eval(&state, &c)?[..m].to_vec();
        let tn = (T::one() + (T::one() + T::lit(4.0) * t * t).sqrt()) * T::lit(0.5);
        let beta = (t - T::one()) / tn;
        let change = norm_inf(&sub(&yn, &y));
        w = yn.iter().zip(&y).map(|(&a, &b)| a + beta * (a - b)).collect();
        y = yn;
        t = tn;
        if !change.is_finite() {
            return Err(Error::InvalidArgument("FDPG iterates became non-finite".into()));
        }
        if k % 25 == 0 {
            if let Some(ws) = polish_dual(dm, d, lambda, &y) {
                let state = [ws.clone(), ws].concat();
                let res = norm_inf(&sub(&step.eval(&state, &c)?, &state));
                if res <= tol {
                    return finish(state, k, TraceStatus::Converged, true);
                }
            }
        }
        if change <= tol {
            let state = [y.clone(), y.clone()].concat();
            if norm_inf(&sub(&step.eval(&state, &c)?, &state)) <= tol {
                return finish(state, k, TraceStatus::Converged, false);
            }
        }
    }
    finish([y.clone(), y].concat(), max_iter, TraceStatus::IterLimit, false)
}

/// Solves the dual `min ½‖d + Dᵀw‖²` over `|w| ≤ λ` with the bound-active set
/// taken from `y`, and checks the multiplier signs.
fn polish_dual<T: Scalar>(dm: &DenseMatrix<T>, d: &[T], lambda: T, y: &[T]) -> Option<Vec<T>> {
    let m = dm.rows();
    let mut w = vec![T::zero(); m];
    let free: Vec<usize> = (0..m).filter(|&i| y[i].abs() < lambda).collect();
    for i in 0..m {
        if y[i] >= lambda {
            w[i] = lambda;
        } else if y[i] <= -lambda {
            w[i] = -lambda;
        }
    }
    if !free.is_empty() {
        // (D_F D_Fᵀ) w_F = −D_F (d + D_Aᵀ w_A)
        let mut base = d.to_vec();
        let dtw = dm.matvec_t(&w);
        for (b, v) in base.iter_mut().zip(dtw) {
            *b += v;
        }
        let k = free.len();
        let gram = DenseMatrix::from_fn(k, k, |a, b| {
            let (ra, rb) = (dm.row(free[a]), dm.row(free[b]));
            ra.iter().zip(rb).map(|(&p, &q)| p * q).sum()
        });
        let rhs: Vec<T> = free
            .iter()
            .map(|&i| -dm.row(i).iter().zip(&base).map(|(&p, &q)| p * q).sum::<T>())
            .collect();
        let sol = LuFactors::new(&gram).ok()?.solve(&rhs).ok()?;
        for (&i, v) in free.iter().zip(sol) {
            if v.abs() > lambda {
                return None;
            }
            w[i] = v;
        }
    }
    let mut u = dm.matvec_t(&w);
    for (ui, &di) in u.iter_mut().zip(d) {
        *ui += di;
    }
    let grad = dm.matvec(&u);
    let slack = T::lit(1e-12) * T::one().max(norm_inf(&grad));
    for i in 0..m {
        if free.contains(&i) {
            continue;
        }
        if w[i] == lambda && grad[i] > slack {
            return None;
        }
        if w[i] == -lambda && grad[i] < -slack {
            return None;
        }
    }
    Some(w)
}

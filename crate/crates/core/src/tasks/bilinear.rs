use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diffstep::SmoothObjective;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Input dimension of the bilinear data generator.
pub const BILINEAR_FEATURES: usize = 10;

/// `max cᵀx + xᵀQy + dᵀy` over `0 ≤ x, y ≤ 1`, `Σx = p`, `Σy = q`, posed as
/// minimization of the negation on the stacked state `(x, y)` with parameters `(c, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearSpec {
    pub q: DenseMatrix<f64>,
    pub p_mass: f64,
    pub q_mass: f64,
}

impl BilinearSpec {
    pub fn new(q: DenseMatrix<f64>, p_mass: f64, q_mass: f64) -> Result<Self> {
        let n = q.rows();
        if !q.is_square() {
            return Err(Error::InvalidArgument("bilinear coupling must be square".into()));
        }
        for m in [p_mass, q_mass] {
            if !(m > 0.0 && m <= n as f64) {
                return Err(Error::InfeasibleMass { mass: m, dim: n });
            }
        }
        Ok(Self { q, p_mass, q_mass })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    /// Global maximizer by enumerating vertex pairs; needs integral masses.
    ///
    /// For fixed `y` the problem is a linear program in `x` and vice versa, so
    /// some pair of vertices attains the global optimum.
    pub fn solve_exact(&self, cd: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let (p, q) = (self.p_mass.round() as usize, self.q_mass.round() as usize);
        if (p as f64 - self.p_mass).abs() > 0.0 || (q as f64 - self.q_mass).abs() > 0.0 {
            return Err(Error::UnsupportedProblemShape(
                "exact bilinear solve needs integral masses".into(),
            ));
        }
        let xs = subsets(n, p);
        let ys = subsets(n, q);
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for sx in &xs {
            for sy in &ys {
                let mut z = vec![0.0; 2 * n];
                for &i in sx {
                    z[i] = 1.0;
                }
                for &j in sy {
                    z[n + j] = 1.0;
                }
                let v = -self.value(&z, cd);
                if v > best.0 {
                    best = (v, z);
                }
            }
        }
        Ok(best.1)
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

impl SmoothObjective<f64> for BilinearSpec {
    fn dim(&self) -> usize {
        2 * self.n()
    }

    fn param_dim(&self) -> usize {
        2 * self.n()
    }

    fn value(&self, z: &[f64], cd: &[f64]) -> f64 {
        let n = self.n();
        let (x, y) = z.split_at(n);
        let qy = self.q.matvec(y);
        -(0..n).map(|i| cd[i] * x[i] + x[i] * qy[i] + cd[n + i] * y[i]).sum::<f64>()
    }

    fn grad(&self, z: &[f64], cd: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (x, y) = z.split_at(n);
        let qy = self.q.matvec(y);
        let qtx = self.q.matvec_t(x);
        (0..n).map(|i| -(cd[i] + qy[i])).chain((0..n).map(|j| -(cd[n + j] + qtx[j]))).collect()
    }

    fn hvp(&self, _z: &[f64], _cd: &[f64], v: &[f64]) -> Vec<f64> {
        let n = self.n();
        let (vx, vy) = v.split_at(n);
        let a = self.q.matvec(vy);
        let b = self.q.matvec_t(vx);
        a.into_iter().chain(b).map(|t| -t).collect()
    }

    fn cross_vjp(&self, _z: &[f64], _cd: &[f64], g: &[f64]) -> Vec<f64> {
        g.iter().map(|v| -v).collect()
    }
}

/// `x cos 2x + 5/2 log(x/(x+2)) + x² sin 4x`, evaluated at `x + 2.5` so the
/// logarithm stays defined on the generator's output range.
pub fn target_nonlinearity(v: f64) -> f64 {
    let x = v + 2.5;
    x * (2.0 * x).cos() + 2.5 * (x / (x + 2.0)).ln() + x * x * (4.0 * x).sin()
}

/// A random coupling `Q` with standard-normal entries and a data set whose
/// targets `(c, d)` come from a random two-layer tanh network applied to
/// `U[−2, 2]` features and then [`target_nonlinearity`].
pub(crate) fn generate(n: usize, samples: usize, rng: &mut ChaCha8Rng) -> (DenseMatrix<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let q = DenseMatrix::from_fn(n, n, |_, _| normal.sample(rng));
    let hidden = 16;
    let f = BILINEAR_FEATURES;
    let w1 = DenseMatrix::from_fn(hidden, f, |_, _| rng.random_range(-1.0..1.0) / (f as f64).sqrt());
    let b1: Vec<f64> = (0..hidden).map(|_| rng.random_range(-0.5..0.5)).collect();
    // |output| ≤ 2 keeps the shifted logarithm argument positive
    let w2 = DenseMatrix::from_fn(2 * n, hidden, |_, _| rng.random_range(-1.0..1.0) * 2.0 / hidden as f64);
    let mut features = Vec::with_capacity(samples);
    let mut params = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u: Vec<f64> = (0..f).map(|_| rng.random_range(-2.0..2.0)).collect();
        let h: Vec<f64> = w1.matvec(&u).iter().zip(&b1).map(|(a, b)| (a + b).tanh()).collect();
        let out = w2.matvec(&h).into_iter().map(target_nonlinearity).collect();
        features.push(u);
        params.push(out);
    }
    (q, features, params)
}

pub(crate) fn spec_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1_000_003).wrapping_add(index as u64))
}

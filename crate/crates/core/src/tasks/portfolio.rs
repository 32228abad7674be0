use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::PortfolioNlp;
use crate::linalg::DenseMatrix;

/// Number of features behind each synthetic price vector.
pub const PORTFOLIO_FEATURES: usize = 5;

/// Covariance from a two-factor model plus idiosyncratic variance, and a risk
/// budget of 1.5 times the risk of the uniform portfolio.
pub(crate) fn random_model(n: usize, rng: &mut ChaCha8Rng) -> PortfolioNlp<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let factors = DenseMatrix::from_fn(n, 2, |_, _| 0.3 * normal.sample(rng));
    let idio: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.05)).collect();
    let v = factors.matmul(&factors.transpose()).add(&DenseMatrix::from_diag(&idio));
    let uniform = vec![1.0 / n as f64; n];
    let nlp = PortfolioNlp { v, gamma: 0.0 };
    let gamma = 1.5 * nlp.risk(&uniform);
    PortfolioNlp { gamma, ..nlp }
}

/// Features `u ~ U[0,1]^5` and prices `c = ((Bu)/5)^degree` elementwise with `B ~ U[0,1]`.
pub(crate) fn prices(n: usize, degree: u32, samples: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let p = PORTFOLIO_FEATURES;
    let b = DenseMatrix::from_fn(n, p, |_, _| rng.random_range(0.0..1.0));
    let mut features = Vec::with_capacity(samples);
    let mut params = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..1.0)).collect();
        let c = b.matvec(&u).into_iter().map(|v| (v / p as f64).powi(degree as i32)).collect();
        features.push(u);
        params.push(c);
    }
    (features, params)
}

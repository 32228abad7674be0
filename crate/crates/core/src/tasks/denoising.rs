use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::DenseMatrix;

/// Total-variation denoising `min_x ½‖x − d‖² + λ‖Dx‖₁` with a learnable `D`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoisingSpec {
    pub length: usize,
    pub lambda: f64,
}

impl DenoisingSpec {
    /// Rows of `D`.
    pub fn rows(&self) -> usize {
        self.length - 1
    }

    /// The differencing matrix `D_{i,i} = 1`, `D_{i,i+1} = −1`.
    pub fn differencing(&self) -> DenseMatrix<f64> {
        DenseMatrix::from_fn(self.rows(), self.length, |i, j| {
            if j == i {
                1.0
            } else if j == i + 1 {
                -1.0
            } else {
                0.0
            }
        })
    }
}

/// Piecewise-constant signals with one to three jumps and levels in `[−1, 1]`,
/// paired with copies corrupted by `N(0, σ²)` noise.
pub(crate) fn signals(n_signals: usize, length: usize, noise_sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut noisy = Vec::with_capacity(n_signals);
    let mut clean = Vec::with_capacity(n_signals);
    for _ in 0..n_signals {
        let jumps = rng.random_range(1..=3usize);
        let mut cuts: Vec<usize> = (0..jumps).map(|_| rng.random_range(1..length)).collect();
        cuts.sort_unstable();
        let mut level = rng.random_range(-1.0..1.0);
        let mut target = Vec::with_capacity(length);
        let mut next_cut = 0;
        for t in 0..length {
            while next_cut < cuts.len() && cuts[next_cut] == t {
                level = rng.random_range(-1.0..1.0);
                next_cut += 1;
            }
            target.push(level);
        }
        let input: Vec<f64> = target.iter().map(|&v| v + noise_sigma * noise.sample(&mut rng)).collect();
        noisy.push(input);
        clean.push(target);
    }
    (noisy, clean)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `v`.
    fn slope(self, v: f64) -> f64 {
        match self {
            Activation::Relu => {
                if v > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = v.tanh();
                1.0 - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    /// `Wu + b`
    Linear,
    /// `W₂ σ(W₁u + b₁) + b₂`
    TwoLayer { hidden: usize, activation: Activation },
    /// A learnable vector that ignores the features, e.g. a shared operator.
    Constant,
}

/// A small model mapping features to predicted parameters, with its parameters
/// flattened into one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub kind: PredictorKind,
    pub input_dim: usize,
    pub output_dim: usize,
    pub theta: Vec<f64>,
}

impl Predictor {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn new(kind: PredictorKind, input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize| -> Vec<f64> {
            let s = 1.0 / (cols.max(1) as f64).sqrt();
            let mut w: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-s..s)).collect();
            w.extend(std::iter::repeat_n(0.0, rows));
            w
        };
        let theta = match kind {
            PredictorKind::Linear => layer(output_dim, input_dim),
            PredictorKind::TwoLayer { hidden, .. } => {
                let mut t = layer(hidden, input_dim);
                t.extend(layer(output_dim, hidden));
                t
            }
            PredictorKind::Constant => vec![0.0; output_dim],
        };
        Self {
            kind,
            input_dim,
            output_dim,
            theta,
        }
    }

    /// A constant predictor starting at `value`.
    pub fn constant(value: Vec<f64>, input_dim: usize) -> Self {
        Self {
            kind: PredictorKind::Constant,
            input_dim,
            output_dim: value.len(),
            theta: value,
        }
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    fn affine(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
        let (mat, bias) = w.split_at(rows * cols);
        (0..rows)
            .map(|r| bias[r] + (0..cols).map(|j| mat[r * cols + j] * u[j]).sum::<f64>())
            .collect()
    }

    /// Predicted parameters for one feature vector.
    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_dim("predictor features", self.input_dim, u.len())?;
        let (i, o) = (self.input_dim, self.output_dim);
        Ok(match self.kind {
            PredictorKind::Linear => Self::affine(&self.theta, o, i, u),
            PredictorKind::TwoLayer { hidden, activation } => {
                let (p1, p2) = self.theta.split_at(hidden * i + hidden);
                let h: Vec<f64> = Self::affine(p1, hidden, i, u).into_iter().map(|v| activation.apply(v)).collect();
                Self::affine(p2, o, hidden, &h)
            }
            PredictorKind::Constant => self.theta.clone(),
        })
    }

    /// `gᵀ ∂forward(u)/∂θ`.
    pub fn vjp(&self, u: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        check_dim("predictor features", self.input_dim, u.len())?;
        check_dim("predictor cotangent", self.output_dim, g.len())?;
        let (i, o) = (self.input_dim, self.output_dim);
        // gradient of an affine map: outer product then the bias
        let affine_vjp = |rows: usize, cols: usize, input: &[f64], g: &[f64], out: &mut Vec<f64>| {
            for r in 0..rows {
                for j in 0..cols {
                    out.push(g[r] * input[j]);
                }
            }
            out.extend_from_slice(&g[..rows]);
        };
        let mut grad = Vec::with_capacity(self.theta.len());
        match self.kind {
            PredictorKind::Linear => affine_vjp(o, i, u, g, &mut grad),
            PredictorKind::TwoLayer { hidden, activation } => {
                let (p1, p2) = self.theta.split_at(hidden * i + hidden);
                let pre = Self::affine(p1, hidden, i, u);
                let h: Vec<f64> = pre.iter().map(|&v| activation.apply(v)).collect();
                let w2 = &p2[..o * hidden];
                let g_h: Vec<f64> = (0..hidden)
                    .map(|j| activation.slope(pre[j]) * (0..o).map(|r| w2[r * hidden + j] * g[r]).sum::<f64>())
                    .collect();
                affine_vjp(hidden, i, u, &g_h, &mut grad);
                affine_vjp(o, hidden, &h, g, &mut grad);
            }
            PredictorKind::Constant => grad.extend_from_slice(g),
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_slope_is_zero_at_the_kink() {
        assert_eq!(Activation::Relu.slope(0.0), 0.0);
        assert_eq!(Activation::Relu.slope(1e-300), 1.0);
        assert!((Activation::Tanh.slope(0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parameter_counts() {
        let two = Predictor::new(PredictorKind::TwoLayer { hidden: 4, activation: Activation::Tanh }, 3, 2, 0);
        assert_eq!(two.num_params(), 4 * 3 + 4 + 2 * 4 + 2);
        assert_eq!(Predictor::new(PredictorKind::Linear, 3, 2, 0).num_params(), 8);
        assert_eq!(Predictor::constant(vec![1.0, 2.0], 5).forward(&[0.0; 5]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn wrong_feature_length_is_an_error() {
        let p = Predictor::new(PredictorKind::Linear, 3, 2, 0);
        assert!(p.forward(&[1.0]).is_err());
        assert!(p.vjp(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let kind = PredictorKind::TwoLayer { hidden: 5, activation: Activation::Relu };
        assert_eq!(Predictor::new(kind, 3, 2, 11), Predictor::new(kind, 3, 2, 11));
        assert_ne!(Predictor::new(kind, 3, 2, 11), Predictor::new(kind, 3, 2, 12));
    }
}

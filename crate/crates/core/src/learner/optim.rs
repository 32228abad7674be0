use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Parse(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    check_dim("adam gradient", theta.len(), grad.len())?;
    if state.m.len() != theta.len() {
        *state = AdamState::new(theta.len());
    }
    state.t += 1;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..theta.len() {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        theta[i] -= lr * mh / (vh.sqrt() + eps);
    }
    Ok(())
}

/// `θ ← θ − lr·g`
pub fn sgd_update(theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check_dim("sgd gradient", theta.len(), grad.len())?;
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        // bias correction makes the first step ±lr regardless of gradient scale
        let mut theta = vec![1.0, 1.0];
        let mut st = AdamState::new(2);
        adam_update(&mut theta, &[1e-3, -50.0], &mut st, 0.1, 0.9, 0.999, 0.0).unwrap();
        assert!((theta[0] - 0.9).abs() < 1e-12 && (theta[1] - 1.1).abs() < 1e-12);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut theta = vec![0.3];
        let mut st = AdamState::default();
        adam_update(&mut theta, &[0.0], &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(theta, vec![0.3]);
        sgd_update(&mut theta, &[0.0], 1.0).unwrap();
        assert_eq!(theta, vec![0.3]);
    }

    #[test]
    fn mismatched_gradient_is_an_error() {
        assert!(sgd_update(&mut [0.0, 0.0], &[1.0], 0.1).is_err());
        assert!(adam_update(&mut [0.0], &[1.0, 2.0], &mut AdamState::new(1), 0.1, 0.9, 0.999, 1e-8).is_err());
        assert!("rmsprop".parse::<Optimizer>().is_err());
    }
}

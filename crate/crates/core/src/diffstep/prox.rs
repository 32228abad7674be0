use super::{check_inputs, DiffStep, Frozen, Linearized};
use crate::error::{Error, Result};
use crate::Scalar;

/// Soft thresholding `sign(x)·max(|x| − λ, 0)`, the prox of `λ‖·‖₁`.
#[derive(Debug, Clone)]
pub struct SoftThreshold<T> {
    dim: usize,
    lambda: T,
}

pub fn soft_threshold<T: Scalar>(dim: usize, lambda: T) -> Result<SoftThreshold<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::InvalidArgument("threshold must be nonnegative".into()));
    }
    Ok(SoftThreshold { dim, lambda })
}

/// Scalar soft threshold.
#[inline]
pub(crate) fn shrink<T: Scalar>(v: T, lambda: T) -> T {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        T::zero()
    }
}

impl<T: Scalar> DiffStep<T> for SoftThreshold<T> {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        Ok(x.iter().map(|&v| shrink(v, self.lambda)).collect())
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        let out = self.eval(x, c)?;
        let identity = self.lambda == T::zero();
        let pass: Vec<bool> = x.iter().map(|v| identity || v.abs() > self.lambda).collect();
        Ok(Box::new(Frozen {
            out,
            out_dim: self.dim,
            state: move |g: &[T]| {
                g.iter().zip(&pass).map(|(&v, &p)| if p { v } else { T::zero() }).collect()
            },
            param: |_: &[T]| Vec::new(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_is_odd_and_zero_inside() {
        assert_eq!(shrink(2.5, 1.0), 1.5);
        assert_eq!(shrink(-2.5, 1.0), -1.5);
        assert_eq!(shrink(0.7, 1.0), 0.0);
        // exactly on the threshold is inside
        assert_eq!(shrink(1.0, 1.0), 0.0);
    }

    #[test]
    fn derivative_at_threshold_is_zero() {
        let s = soft_threshold::<f64>(2, 1.0).unwrap();
        assert_eq!(s.vjp_state(&[1.0, -1.0], &[], &[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
    }
}

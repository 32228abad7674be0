use super::{check_inputs, DiffStep, Frozen, Linearized};
use crate::error::{check_dim, Error, Result};
use crate::Scalar;

/// Clamp onto the box `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct BoxProject<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

pub fn box_project<T: Scalar>(lo: Vec<T>, hi: Vec<T>) -> Result<BoxProject<T>> {
    check_dim("box_project bounds", lo.len(), hi.len())?;
    if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::InvalidArgument("box bounds must satisfy lo <= hi".into()));
    }
    Ok(BoxProject { lo, hi })
}

impl<T: Scalar> DiffStep<T> for BoxProject<T> {
    fn state_dim(&self) -> usize {
        self.lo.len()
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        Ok(x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| v.max(l).min(h))
            .collect())
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        let out = self.eval(x, c)?;
        let inside: Vec<bool> = x
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&v, (&l, &h))| l < v && v < h)
            .collect();
        Ok(Box::new(Frozen {
            out,
            out_dim: self.lo.len(),
            state: move |g: &[T]| mask(g, &inside),
            param: |_: &[T]| Vec::new(),
        }))
    }
}

fn mask<T: Scalar>(g: &[T], keep: &[bool]) -> Vec<T> {
    g.iter().zip(keep).map(|(&v, &k)| if k { v } else { T::zero() }).collect()
}

/// Euclidean projection onto a product of capped simplices
/// `{x : Σ_{i∈Bⱼ} xᵢ = mⱼ, 0 ≤ x ≤ 1}` over consecutive blocks `Bⱼ`.
#[derive(Debug, Clone)]
pub struct CappedSimplex<T> {
    blocks: Vec<(usize, T)>,
    dim: usize,
}

/// Projection onto the capped simplex `{x ∈ ℝⁿ : Σx = mass, 0 ≤ x ≤ 1}`.
pub fn simplex_project<T: Scalar>(dim: usize, mass: T) -> Result<CappedSimplex<T>> {
    capped_simplex_product(&[(dim, mass)])
}

/// Projection onto a product of capped simplices given as `(block length, mass)` pairs.
pub fn capped_simplex_product<T: Scalar>(blocks: &[(usize, T)]) -> Result<CappedSimplex<T>> {
    for &(len, mass) in blocks {
        check_mass(len, mass)?;
    }
    Ok(CappedSimplex {
        blocks: blocks.to_vec(),
        dim: blocks.iter().map(|b| b.0).sum(),
    })
}

fn check_mass<T: Scalar>(len: usize, mass: T) -> Result<()> {
    if !(mass > T::zero()) || mass > T::from_usize_lossy(len) {
        return Err(Error::InfeasibleMass {
            mass: mass.as_f64(),
            dim: len,
        });
    }
    Ok(())
}

/// Projects `x` onto `{Σy = mass, 0 ≤ y ≤ 1}` by bisection on the shift `τ` in
/// `clip(x − τ, 0, 1)`, finished by solving for `τ` exactly on the active set.
pub fn project_capped_simplex<T: Scalar>(x: &[T], mass: T) -> Result<Vec<T>> {
    check_mass(x.len(), mass)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("projection input is not finite".into()));
    }
    let clip = |tau: T| -> Vec<T> { x.iter().map(|&v| (v - tau).max(T::zero()).min(T::one())).collect() };
    let total = |tau: T| -> T { x.iter().map(|&v| (v - tau).max(T::zero()).min(T::one())).sum() };

    let (mut lo, mut hi) = x.iter().fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
    lo = lo - T::one();
    let tol = T::lit(1e-12);
    for _ in 0..200 {
        let mid = T::lit(0.5) * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if total(mid) > mass {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol * T::one().max(hi.abs()) {
            break;
        }
    }

    // Exact shift from the active set at the bracketed τ.
    let mut tau = T::lit(0.5) * (lo + hi);
    for _ in 0..4 {
        let (mut free_sum, mut free_count, mut capped) = (T::zero(), 0usize, T::zero());
        for &v in x {
            let y = v - tau;
            if y >= T::one() {
                capped += T::one();
            } else if y > T::zero() {
                free_sum += v;
                free_count += 1;
            }
        }
        if free_count == 0 {
            break;
        }
        let refined = (free_sum + capped - mass) / T::from_usize_lossy(free_count);
        if refined == tau {
            break;
        }
        let consistent = x.iter().all(|&v| {
            let before = v - tau;
            let after = v - refined;
            (before >= T::one()) == (after >= T::one()) && (before > T::zero()) == (after > T::zero())
        });
        if !consistent {
            break;
        }
        tau = refined;
    }
    // With no free coordinate the bracket endpoints can be exact where the midpoint is not.
    let gap = |t: T| (total(t) - mass).abs();
    for cand in [lo, hi] {
        if gap(cand) < gap(tau) {
            tau = cand;
        }
    }
    Ok(clip(tau))
}

impl<T: Scalar> CappedSimplex<T> {
    pub fn blocks(&self) -> &[(usize, T)] {
        &self.blocks
    }

    fn project(&self, x: &[T]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(self.dim);
        let mut start = 0;
        for &(len, mass) in &self.blocks {
            out.extend(project_capped_simplex(&x[start..start + len], mass)?);
            start += len;
        }
        Ok(out)
    }
}

/// Pullback of the capped-simplex projection: on each block, coordinates
/// strictly inside `(0, 1)` receive `g − mean(g)` over that set, all others
/// are set to zero.
fn capped_vjp<T: Scalar>(y: &[T], blocks: &[(usize, T)], g: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); g.len()];
    let mut start = 0;
    for &(len, _) in blocks {
        let range = start..start + len;
        let free: Vec<usize> = range.filter(|&i| y[i] > T::zero() && y[i] < T::one()).collect();
        if !free.is_empty() {
            let mean = free.iter().map(|&i| g[i]).sum::<T>() / T::from_usize_lossy(free.len());
            for &i in &free {
                out[i] = g[i] - mean;
            }
        }
        start += len;
    }
    out
}

impl<T: Scalar> DiffStep<T> for CappedSimplex<T> {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn param_dim(&self) -> usize {
        0
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        self.project(x)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        let out = self.eval(x, c)?;
        let y = out.clone();
        Ok(Box::new(Frozen {
            out,
            out_dim: self.dim,
            state: move |g: &[T]| capped_vjp(&y, &self.blocks, g),
            param: |_: &[T]| Vec::new(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_ties_count_as_inactive() {
        // x − τ lands exactly on 0 for the last coordinate
        let p = simplex_project::<f64>(3, 1.0).unwrap();
        let x = [1.0, 0.5, 0.0];
        let y = p.eval(&x, &[]).unwrap();
        assert_eq!(y, vec![0.75, 0.25, 0.0]);
        let v = p.vjp_state(&x, &[], &[0.0, 0.0, 1.0]).unwrap();
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn full_mass_caps_everything() {
        assert_eq!(project_capped_simplex(&[0.2, -3.0, 9.0], 3.0).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn rejects_non_finite_input() {
        assert!(project_capped_simplex(&[0.0, f64::NAN], 1.0).is_err());
    }

    #[test]
    fn product_projects_blocks_independently() {
        let p = capped_simplex_product::<f64>(&[(2, 1.0), (3, 2.0)]).unwrap();
        let y = p.eval(&[3.0, 0.0, 0.5, 0.5, 0.5], &[]).unwrap();
        assert_eq!(&y[..2], &[1.0, 0.0]);
        assert!((y[2..].iter().sum::<f64>() - 2.0).abs() < 1e-12);
    }
}

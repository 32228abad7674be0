use super::{check_inputs, DiffStep, Linearized, SharedStep};
use crate::error::{check_dim, Error, Result};
use crate::Scalar;

/// Sequential composition `U = S_K ∘ … ∘ S_1`, all stages sharing the parameters `c`.
pub struct Compose<T: Scalar> {
    stages: Vec<SharedStep<T>>,
}

pub fn compose<T: Scalar>(stages: Vec<SharedStep<T>>) -> Result<Compose<T>> {
    let first = stages
        .first()
        .ok_or_else(|| Error::InvalidArgument("compose needs at least one stage".into()))?;
    let p = first.param_dim();
    for pair in stages.windows(2) {
        check_dim("compose: stage dimensions", pair[0].output_dim(), pair[1].state_dim())?;
    }
    for s in &stages {
        check_dim("compose: parameter dimensions", p, s.param_dim())?;
    }
    Ok(Compose { stages })
}

impl<T: Scalar> Compose<T> {
    pub fn stages(&self) -> &[SharedStep<T>] {
        &self.stages
    }
}

impl<T: Scalar> DiffStep<T> for Compose<T> {
    fn state_dim(&self) -> usize {
        self.stages[0].state_dim()
    }

    fn param_dim(&self) -> usize {
        self.stages[0].param_dim()
    }

    fn output_dim(&self) -> usize {
        self.stages[self.stages.len() - 1].output_dim()
    }

    fn eval(&self, x: &[T], c: &[T]) -> Result<Vec<T>> {
        check_inputs(self, x, c)?;
        let mut cur = x.to_vec();
        for s in &self.stages {
            cur = s.eval(&cur, c)?;
        }
        Ok(cur)
    }

    fn linearize<'a>(&'a self, x: &[T], c: &[T]) -> Result<Box<dyn Linearized<T> + 'a>> {
        check_inputs(self, x, c)?;
        let mut lins: Vec<Box<dyn Linearized<T> + 'a>> = Vec::with_capacity(self.stages.len());
        let mut cur = x.to_vec();
        for s in &self.stages {
            let lin = s.linearize(&cur, c)?;
            cur = lin.output().to_vec();
            lins.push(lin);
        }
        Ok(Box::new(ComposeLin {
            lins,
            p: self.param_dim(),
        }))
    }
}

struct ComposeLin<'a, T> {
    lins: Vec<Box<dyn Linearized<T> + 'a>>,
    p: usize,
}

impl<T: Scalar> Linearized<T> for ComposeLin<'_, T> {
    fn output(&self) -> &[T] {
        self.lins[self.lins.len() - 1].output()
    }

    fn vjp_state(&self, g: &[T]) -> Result<Vec<T>> {
        let mut a = g.to_vec();
        for lin in self.lins.iter().rev() {
            a = lin.vjp_state(&a)?;
        }
        Ok(a)
    }

    fn vjp_param(&self, g: &[T]) -> Result<Vec<T>> {
        let mut a = g.to_vec();
        let mut out = vec![T::zero(); self.p];
        for (k, lin) in self.lins.iter().enumerate().rev() {
            for (o, v) in out.iter_mut().zip(lin.vjp_param(&a)?) {
                *o += v;
            }
            if k > 0 {
                a = lin.vjp_state(&a)?;
            }
        }
        Ok(out)
    }
}

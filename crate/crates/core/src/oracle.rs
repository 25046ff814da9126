//! Uniform access to an energy `F`, its gradient and Hessian-vector products.

use crate::error::{Error, Result};

pub trait EnergyOracle: Sync {
    /// Dimension d of the parameter space.
    fn dim(&self) -> usize;

    fn value(&self, theta: &[f64]) -> Result<f64>;

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// `∇²F(θ)·v`.
    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(theta)?, self.grad(theta)?))
    }

    /// Hessian-vector products for several directions at one point.
    fn hvp_many(&self, theta: &[f64], vs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        vs.iter().map(|v| self.hvp(theta, v)).collect()
    }
}

impl<T: EnergyOracle + ?Sized> EnergyOracle for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, theta: &[f64]) -> Result<f64> {
        (**self).value(theta)
    }
    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (**self).grad(theta)
    }
    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        (**self).hvp(theta, v)
    }
    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        (**self).value_and_grad(theta)
    }
    fn hvp_many(&self, theta: &[f64], vs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        (**self).hvp_many(theta, vs)
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Adds the weight-decay penalty `(λ/2)‖θ‖²` to an unregularized data term.
#[derive(Clone, Debug)]
pub struct Regularized<O> {
    pub data: O,
    pub lambda: f64,
}

impl<O: EnergyOracle> Regularized<O> {
    pub fn new(data: O, lambda: f64) -> Self {
        Regularized { data, lambda }
    }
}

impl<O: EnergyOracle> EnergyOracle for Regularized<O> {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.data.value(theta)? + 0.5 * self.lambda * norm_sq(theta))
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(theta)?.1)
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (l, mut g) = self.data.value_and_grad(theta)?;
        for (gi, &t) in g.iter_mut().zip(theta) {
            *gi += self.lambda * t;
        }
        Ok((l + 0.5 * self.lambda * norm_sq(theta), g))
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let mut h = self.data.hvp(theta, v)?;
        for (hi, &vi) in h.iter_mut().zip(v) {
            *hi += self.lambda * vi;
        }
        Ok(h)
    }

    fn hvp_many(&self, theta: &[f64], vs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut hs = self.data.hvp_many(theta, vs)?;
        for (h, v) in hs.iter_mut().zip(vs) {
            for (hi, &vi) in h.iter_mut().zip(v) {
                *hi += self.lambda * vi;
            }
        }
        Ok(hs)
    }
}

//! Closed-form synthetic energies and a dense-Hessian brute-force oracle.
//!
//! These are the ground truth every stochastic estimator is checked against.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{check_len, norm_sq, EnergyOracle};

/// Largest dimension for which the Hessian is materialized.
pub const DENSE_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticEnergy {
    /// `(λ/2)‖θ‖²`
    PureQuadratic { lambda: f64, dim: usize },
    /// `(λ/2)‖θ‖² + a·Σᵢ sin(ω θᵢ)`
    QuadraticPlusBounded {
        lambda: f64,
        amplitude: f64,
        frequency: f64,
        dim: usize,
    },
}

impl SyntheticEnergy {
    pub fn pure_quadratic(lambda: f64, dim: usize) -> Self {
        SyntheticEnergy::PureQuadratic { lambda, dim }
    }

    /// Default perturbation `a = 1`, `ω = 3`.
    pub fn quadratic_plus_bounded(lambda: f64, dim: usize) -> Self {
        SyntheticEnergy::QuadraticPlusBounded {
            lambda,
            amplitude: 1.0,
            frequency: 3.0,
            dim,
        }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            SyntheticEnergy::PureQuadratic { lambda, .. } => lambda,
            SyntheticEnergy::QuadraticPlusBounded { lambda, .. } => lambda,
        }
    }

    // (a, ω); the pure quadratic is the a = 0 case
    fn perturbation(&self) -> (f64, f64) {
        match *self {
            SyntheticEnergy::PureQuadratic { .. } => (0.0, 0.0),
            SyntheticEnergy::QuadraticPlusBounded {
                amplitude, frequency, ..
            } => (amplitude, frequency),
        }
    }

    /// Hessian diagonal `λ − aω² sin(ωθᵢ)` (the Hessian is diagonal).
    pub fn hessian_diagonal(&self, theta: &[f64]) -> Vec<f64> {
        let lambda = self.lambda();
        let (a, w) = self.perturbation();
        theta.iter().map(|&t| lambda - a * w * w * (w * t).sin()).collect()
    }

    /// `ΔF(θ)` in closed form.
    pub fn laplacian(&self, theta: &[f64]) -> f64 {
        self.hessian_diagonal(theta).iter().sum()
    }

    /// Sup of ‖∇(F − (λ/2)‖θ‖²)‖ over all θ: `|a|·ω·√d`.
    pub fn data_gradient_bound(&self) -> f64 {
        let (a, w) = self.perturbation();
        a.abs() * w * (self.dim() as f64).sqrt()
    }

    /// Global minimum `F*` and a minimizer. The energy is separable, so this is
    /// `d` copies of a one-dimensional global minimization. `None` when λ ≤ 0
    /// and the infimum is not attained by a unique bounded search.
    pub fn minimum(&self) -> Option<(f64, Vec<f64>)> {
        let lambda = self.lambda();
        let (a, w) = self.perturbation();
        let d = self.dim();
        if a == 0.0 {
            return (lambda >= 0.0).then(|| (0.0, vec![0.0; d]));
        }
        if lambda <= 0.0 {
            return None;
        }
        let g = |x: f64| 0.5 * lambda * x * x + a * (w * x).sin();
        let gp = |x: f64| lambda * x + a * w * (w * x).cos();
        let gpp = |x: f64| lambda - a * w * w * (w * x).sin();
        // g(x) ≥ λx²/2 − |a| and g(0) = 0 bound the minimizer
        let radius = (2.0 * a.abs() / lambda).sqrt() + 1e-9;
        let n = 20_000;
        let mut best = (0.0, g(0.0));
        for i in 0..=n {
            let x = -radius + 2.0 * radius * i as f64 / n as f64;
            let v = g(x);
            if v < best.1 {
                best = (x, v);
            }
        }
        let mut x = best.0;
        for _ in 0..50 {
            let h = gpp(x);
            if h <= 0.0 {
                break;
            }
            let step = gp(x) / h;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (x, v) = if g(x) <= best.1 { (x, g(x)) } else { best };
        Some((d as f64 * v, vec![x; d]))
    }
}

impl EnergyOracle for SyntheticEnergy {
    fn dim(&self) -> usize {
        match *self {
            SyntheticEnergy::PureQuadratic { dim, .. } => dim,
            SyntheticEnergy::QuadraticPlusBounded { dim, .. } => dim,
        }
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        check_len(self.dim(), theta.len())?;
        let (a, w) = self.perturbation();
        let bumps: f64 = if a == 0.0 {
            0.0
        } else {
            theta.iter().map(|&t| (w * t).sin()).sum()
        };
        Ok(0.5 * self.lambda() * norm_sq(theta) + a * bumps)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), theta.len())?;
        let lambda = self.lambda();
        let (a, w) = self.perturbation();
        Ok(theta.iter().map(|&t| lambda * t + a * w * (w * t).cos()).collect())
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), theta.len())?;
        check_len(self.dim(), v.len())?;
        Ok(self
            .hessian_diagonal(theta)
            .iter()
            .zip(v)
            .map(|(h, x)| h * x)
            .collect())
    }
}

/// `Ψ_s(θ) = −ΔF(θ) + ‖∇F(θ)‖²/s` from closed forms.
pub fn analytic_psi(energy: &SyntheticEnergy, theta: &[f64], s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::invalid("s must be positive"));
    }
    let g = energy.grad(theta)?;
    Ok(-energy.laplacian(theta) + norm_sq(&g) / s)
}

/// `F(θ) = ½ θᵀAθ` for a symmetric matrix `A`.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    matrix: DMatrix<f64>,
}

impl QuadraticForm {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("quadratic form needs a square matrix"));
        }
        Ok(QuadraticForm { matrix })
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        QuadraticForm {
            matrix: DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
        }
    }

    /// `½ (u·θ)²`
    pub fn rank_one(u: &[f64]) -> Self {
        let u = nalgebra::DVector::from_column_slice(u);
        QuadraticForm {
            matrix: &u * u.transpose(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.matrix.nrows();
        // column-major storage: accumulate columns
        let mut out = vec![0.0; n];
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            let col = self.matrix.column(j);
            for (o, &c) in out.iter_mut().zip(col.iter()) {
                *o += c * vj;
            }
        }
        out
    }
}

impl EnergyOracle for QuadraticForm {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        check_len(self.dim(), theta.len())?;
        let at = self.apply(theta);
        Ok(0.5 * crate::oracle::dot(theta, &at))
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), theta.len())?;
        Ok(self.apply(theta))
    }

    fn hvp(&self, _theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), v.len())?;
        Ok(self.apply(v))
    }
}

/// Hessian of an oracle at one point, assembled column by column from
/// Hessian-vector products against basis vectors.
#[derive(Clone, Debug)]
pub struct DenseHessianOracle {
    matrix: DMatrix<f64>,
}

impl DenseHessianOracle {
    pub fn assemble(oracle: &(impl EnergyOracle + ?Sized), theta: &[f64]) -> Result<Self> {
        let d = oracle.dim();
        if d > DENSE_CAP {
            return Err(Error::DimensionTooLarge { d, cap: DENSE_CAP });
        }
        check_len(d, theta.len())?;
        let cols: Vec<Vec<f64>> = (0..d)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; d];
                e[j] = 1.0;
                oracle.hvp(theta, &e)
            })
            .collect::<Result<_>>()?;
        let matrix = DMatrix::from_fn(d, d, |i, j| cols[j][i]);
        Ok(DenseHessianOracle { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `max |Hᵢⱼ − Hⱼᵢ| / max |Hᵢⱼ|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.amax().max(f64::MIN_POSITIVE);
        (&self.matrix - self.matrix.transpose()).amax() / scale
    }

    fn symmetric(&self) -> DMatrix<f64> {
        (&self.matrix + self.matrix.transpose()) * 0.5
    }

    /// Exact `Tr ∇²F`.
    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    /// `‖H‖_F²`
    pub fn frobenius_sq(&self) -> f64 {
        self.matrix.norm_squared()
    }

    /// Exact variance of a single Rademacher quadratic form `vᵀHv`:
    /// `2(‖H‖_F² − Σᵢ Hᵢᵢ²)`.
    pub fn rademacher_variance(&self) -> f64 {
        let h = self.symmetric();
        let diag_sq: f64 = h.diagonal().iter().map(|x| x * x).sum();
        2.0 * (h.norm_squared() - diag_sq)
    }

    /// Exact variance of a single Gaussian quadratic form: `2‖H‖_F²`.
    pub fn gaussian_variance(&self) -> f64 {
        2.0 * self.symmetric().norm_squared()
    }

    /// All eigenvalues, sorted descending.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.symmetric()).eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// The assembled Hessian as a quadratic energy with the same second
    /// derivative (fast Hessian-vector products for repeated estimation).
    pub fn as_quadratic(&self) -> QuadraticForm {
        QuadraticForm {
            matrix: self.symmetric(),
        }
    }
}

pub fn dense_trace(oracle: &(impl EnergyOracle + ?Sized), theta: &[f64]) -> Result<f64> {
    Ok(DenseHessianOracle::assemble(oracle, theta)?.trace())
}

pub fn dense_spectrum(oracle: &(impl EnergyOracle + ?Sized), theta: &[f64]) -> Result<Vec<f64>> {
    Ok(DenseHessianOracle::assemble(oracle, theta)?.spectrum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_quadratic_psi_closed_form() {
        let e = SyntheticEnergy::pure_quadratic(0.3, 5);
        let theta = [1.0, -2.0, 0.5, 0.0, 3.0];
        let s = 2.0;
        let want = -0.3 * 5.0 + 0.09 / s * norm_sq(&theta);
        assert!((analytic_psi(&e, &theta, s).unwrap() - want).abs() < 1e-14);
        assert_eq!(analytic_psi(&e, &[0.0; 5], s).unwrap(), -1.5);
    }

    #[test]
    fn zero_amplitude_reduces_to_quadratic() {
        let q = SyntheticEnergy::pure_quadratic(0.7, 3);
        let b = SyntheticEnergy::QuadraticPlusBounded {
            lambda: 0.7,
            amplitude: 0.0,
            frequency: 3.0,
            dim: 3,
        };
        let t = [0.2, -1.1, 4.0];
        assert_eq!(analytic_psi(&q, &t, 1.0).unwrap(), analytic_psi(&b, &t, 1.0).unwrap());
        assert_eq!(q.value(&t).unwrap(), b.value(&t).unwrap());
    }

    #[test]
    fn nonpositive_s_rejected() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 2);
        assert!(analytic_psi(&e, &[0.0, 0.0], 0.0).is_err());
        assert!(analytic_psi(&e, &[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn dense_trace_of_quadratics() {
        let e = SyntheticEnergy::pure_quadratic(0.5, 10);
        assert!((dense_trace(&e, &[0.0; 10]).unwrap() - 5.0).abs() < 1e-15);
        let id = SyntheticEnergy::pure_quadratic(1.0, 7);
        assert_eq!(dense_trace(&id, &[1.0; 7]).unwrap(), 7.0);
    }

    #[test]
    fn spectra_of_known_energies() {
        let e = SyntheticEnergy::pure_quadratic(0.25, 6);
        assert!(dense_spectrum(&e, &[0.3; 6]).unwrap().iter().all(|&x| x == 0.25));

        let u = [0.6, 0.0, 0.8, 0.0];
        let spec = dense_spectrum(&QuadraticForm::rank_one(&u), &[0.0; 4]).unwrap();
        assert!((spec[0] - 1.0).abs() < 1e-14);
        assert!(spec[1..].iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn cap_is_enforced() {
        let e = SyntheticEnergy::pure_quadratic(1.0, DENSE_CAP + 1);
        let theta = vec![0.0; DENSE_CAP + 1];
        assert!(matches!(
            DenseHessianOracle::assemble(&e, &theta),
            Err(Error::DimensionTooLarge { .. })
        ));
    }

    #[test]
    fn bounded_minimum_is_global() {
        let e = SyntheticEnergy::QuadraticPlusBounded {
            lambda: 1.0,
            amplitude: 0.05,
            frequency: 3.0,
            dim: 4,
        };
        let (fstar, x) = e.minimum().unwrap();
        assert!((e.value(&x).unwrap() - fstar).abs() < 1e-12);
        assert!(e.grad(&x).unwrap().iter().all(|g| g.abs() < 1e-12));
        for i in -4000..=4000 {
            let t = i as f64 * 1e-3;
            assert!(e.value(&[t; 4]).unwrap() >= fstar - 1e-12);
        }
    }
}

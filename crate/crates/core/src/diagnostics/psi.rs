use serde::{Deserialize, Serialize};

use super::hutchinson::{hutchinson_trace, ProbeConfig};
use crate::error::{Error, Result};
use crate::oracle::{norm_sq, EnergyOracle};

/// One evaluation of `Ψ_s(θ) = −ΔF(θ) + ‖∇F(θ)‖²/s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub theta_norm_sq: f64,
    pub trace_est: f64,
    pub trace_std_err: f64,
    pub grad_norm_sq: f64,
    pub psi_est: f64,
    pub s: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    #[serde(skip)]
    pub samples: Option<Vec<f64>>,
}

impl DiagnosticRecord {
    /// Ψ recomputed from the stored trace and gradient norm.
    pub fn psi_from_parts(&self) -> f64 {
        -self.trace_est + self.grad_norm_sq / self.s
    }

    /// Standard error of `psi_est`; the gradient term is exact.
    pub fn psi_std_err(&self) -> f64 {
        self.trace_std_err
    }
}

pub fn psi_estimate(
    oracle: &(impl EnergyOracle + ?Sized),
    theta: &[f64],
    s: f64,
    probes: &ProbeConfig,
) -> Result<DiagnosticRecord> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid(format!("s must be positive and finite, got {s}")));
    }
    let trace = hutchinson_trace(oracle, theta, probes)?;
    let grad_norm_sq = norm_sq(&oracle.grad(theta)?);
    Ok(DiagnosticRecord {
        theta_norm_sq: norm_sq(theta),
        trace_est: trace.estimate,
        trace_std_err: trace.std_err,
        grad_norm_sq,
        psi_est: -trace.estimate + grad_norm_sq / s,
        s,
        m: probes.count,
        seed: probes.seed,
        samples: Some(trace.samples),
    })
}

//! Closed-form log-Sobolev, mixing, envelope and PAC-Bayes calculators.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryInputs {
    pub lambda: f64,
    pub s: f64,
    pub d: usize,
    /// Inverse temperature of the Gibbs measure.
    pub beta: f64,
    /// Bound on the expected squared gradient noise.
    pub sigma_sq: f64,
    pub l_smooth: f64,
    pub eta: f64,
    pub epsilon: f64,
    pub f0: f64,
    pub f_star: f64,
    pub delta: f64,
    pub n: usize,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
}

impl TheoryInputs {
    /// Inputs with `β = λ⁻¹`; the remaining fields are placeholders to be
    /// overwritten.
    pub fn with_decay(lambda: f64, s: f64, d: usize) -> Self {
        TheoryInputs {
            lambda,
            s,
            d,
            beta: 1.0 / lambda,
            sigma_sq: 1.0,
            l_smooth: 1.0,
            eta: 1e-3,
            epsilon: 1e-2,
            f0: 1.0,
            f_star: 0.0,
            delta: 0.05,
            n: 1000,
            c1: None,
            c2: None,
        }
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {x}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevConstants {
    pub c_ls: f64,
    /// Reported as the same upper bound, since `C_P ≤ C_LS`.
    pub c_p: f64,
}

/// `C_LS = (s/λ)(1 + d/(λs))`.
pub fn log_sobolev_bound(lambda: f64, s: f64, d: usize) -> Result<SobolevConstants> {
    if lambda == 0.0 {
        return Err(Error::NoConfinement);
    }
    positive("lambda", lambda)?;
    positive("s", s)?;
    let c_ls = (s / lambda) * (1.0 + d as f64 / (lambda * s));
    Ok(SobolevConstants { c_ls, c_p: c_ls })
}

/// `β⁻¹ = η·E‖ξ‖²/(2d)`.
pub fn langevin_temperature(eta: f64, expected_noise_sq: f64, d: usize) -> Result<f64> {
    positive("eta", eta)?;
    positive("expected squared noise", expected_noise_sq)?;
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    Ok(eta * expected_noise_sq / (2.0 * d as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingPrescription {
    pub eta_max: f64,
    pub t_min: u64,
    /// The configured η exceeds `eta_max`.
    pub eta_too_large: bool,
}

/// `eta_max = min{1, λ/(4σ²)}` and
/// `T_min = ⌈C_LS/(2η)·ln(2(F0 − F*)/ε)⌉`.
pub fn mixing_prescription(inputs: &TheoryInputs) -> Result<MixingPrescription> {
    let c = log_sobolev_bound(inputs.lambda, inputs.s, inputs.d)?;
    positive("sigma_sq", inputs.sigma_sq)?;
    positive("epsilon", inputs.epsilon)?;
    positive("eta", inputs.eta)?;
    if !(inputs.f0 > inputs.f_star) {
        return Err(Error::invalid(format!(
            "need F0 > F*, got F0 = {}, F* = {}",
            inputs.f0, inputs.f_star
        )));
    }
    let eta_max = (inputs.lambda / (4.0 * inputs.sigma_sq)).min(1.0);
    let t = c.c_ls / (2.0 * inputs.eta) * (2.0 * (inputs.f0 - inputs.f_star) / inputs.epsilon).ln();
    Ok(MixingPrescription {
        eta_max,
        t_min: t.max(0.0).ceil() as u64,
        eta_too_large: inputs.eta > eta_max,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopePoint {
    pub step: u64,
    pub bound: f64,
}

/// `λ·(1 − 2η/C_LS(βF))^T·(F0 − F*) + η·L·σ²/4` with `C_LS(βF) = β⁻¹·C_LS(F)`.
pub fn suboptimality_envelope(inputs: &TheoryInputs, steps: &[u64]) -> Result<Vec<EnvelopePoint>> {
    let c = log_sobolev_bound(inputs.lambda, inputs.s, inputs.d)?;
    positive("beta", inputs.beta)?;
    positive("eta", inputs.eta)?;
    let scaled = c.c_ls / inputs.beta;
    let rate = 2.0 * inputs.eta / scaled;
    if rate >= 1.0 {
        return Err(Error::InvalidContraction(rate));
    }
    let floor = inputs.eta * inputs.l_smooth * inputs.sigma_sq / 4.0;
    let gap = inputs.f0 - inputs.f_star;
    Ok(steps
        .iter()
        .map(|&step| EnvelopePoint {
            step,
            bound: inputs.lambda * (step as f64 * (-rate).ln_1p()).exp() * gap + floor,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacBayes {
    /// `None` when the square-root argument is negative.
    pub bound: Option<f64>,
    pub kl_term: f64,
    /// `(d/2)·ln(λ/(2πβ))`.
    pub k0: f64,
    /// `kl_term + ln(2√n/δ)`; the bound is defined only when it is ≥ 0.
    pub sqrt_argument: f64,
    pub valid: bool,
}

/// `bound = R̂ + sqrt((kl + ln(2√n/δ)) / (2(n − 1)))` with
/// `kl = β·F(θ̂) + (d/2)·ln(1 + β/λ) + K0`.
pub fn pac_bayes_bound(f_hat: f64, empirical_risk: f64, inputs: &TheoryInputs) -> Result<PacBayes> {
    positive("lambda", inputs.lambda)?;
    positive("beta", inputs.beta)?;
    if inputs.n < 2 {
        return Err(Error::invalid("PAC-Bayes needs n ≥ 2"));
    }
    if !(inputs.delta > 0.0 && inputs.delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", inputs.delta)));
    }
    if !f_hat.is_finite() || !empirical_risk.is_finite() {
        return Err(Error::invalid("F(θ̂) and the empirical risk must be finite"));
    }
    let (d, n, beta, lambda) = (inputs.d as f64, inputs.n as f64, inputs.beta, inputs.lambda);
    let k0 = d / 2.0 * (lambda / (2.0 * PI * beta)).ln();
    let kl_term = beta * f_hat + d / 2.0 * (beta / lambda).ln_1p() + k0;
    let sqrt_argument = kl_term + (2.0 * n.sqrt() / inputs.delta).ln();
    let valid = sqrt_argument >= 0.0;
    let bound = valid.then(|| empirical_risk + (sqrt_argument / (2.0 * (n - 1.0))).sqrt());
    Ok(PacBayes {
        bound,
        kl_term,
        k0,
        sqrt_argument,
        valid,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub c_ls: f64,
    pub c_p: f64,
    pub eta_max: f64,
    pub t_min: u64,
    pub eta_too_large: bool,
    /// `None` when the contraction factor is invalid.
    pub suboptimality_envelope: Option<Vec<EnvelopePoint>>,
    pub pac_bayes: PacBayes,
    /// Temperature implied by the measured gradient noise, if supplied.
    pub beta_from_noise: Option<f64>,
    /// `β` differs from the noise-implied value by more than 1%.
    pub beta_mismatch: bool,
    pub inputs: TheoryInputs,
}

impl BoundReport {
    pub fn build(
        inputs: &TheoryInputs,
        f_hat: f64,
        empirical_risk: f64,
        steps: &[u64],
        measured_noise_sq: Option<f64>,
    ) -> Result<Self> {
        let c = log_sobolev_bound(inputs.lambda, inputs.s, inputs.d)?;
        let mix = mixing_prescription(inputs)?;
        let envelope = match suboptimality_envelope(inputs, steps) {
            Ok(e) => Some(e),
            Err(Error::InvalidContraction(_)) => None,
            Err(e) => return Err(e),
        };
        let pac_bayes = pac_bayes_bound(f_hat, empirical_risk, inputs)?;
        let beta_from_noise = measured_noise_sq
            .map(|sq| langevin_temperature(inputs.eta, sq, inputs.d).map(|t| 1.0 / t))
            .transpose()?;
        let beta_mismatch = beta_from_noise.is_some_and(|b| ((b - inputs.beta) / inputs.beta).abs() > 0.01);
        Ok(BoundReport {
            c_ls: c.c_ls,
            c_p: c.c_p,
            eta_max: mix.eta_max,
            t_min: mix.t_min,
            eta_too_large: mix.eta_too_large,
            suboptimality_envelope: envelope,
            pac_bayes,
            beta_from_noise,
            beta_mismatch,
            inputs: inputs.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(format!("json: {e}")))
    }

    /// Envelope as CSV with columns `step, bound`.
    pub fn write_envelope_csv(&self, out: impl Write) -> Result<()> {
        write_envelope_csv(self.suboptimality_envelope.as_deref().unwrap_or(&[]), out)
    }
}

pub fn write_envelope_csv(points: &[EnvelopePoint], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p).map_err(|e| Error::invalid(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sobolev_hand_values() {
        assert_eq!(log_sobolev_bound(1.0, 1.0, 4).unwrap().c_ls, 5.0);
        assert_eq!(log_sobolev_bound(0.5, 2.0, 0).unwrap().c_ls, 4.0);
        let big = log_sobolev_bound(1e-2, 1.0, 125_000_000).unwrap().c_ls;
        assert!((big - 100.0 * (1.0 + 1.25e10)).abs() < 1e-3 * big * 1e-9);
        assert!(matches!(log_sobolev_bound(0.0, 1.0, 4), Err(Error::NoConfinement)));
        assert!(log_sobolev_bound(1.0, 0.0, 4).is_err());
    }

    #[test]
    fn temperature_scales_with_eta() {
        let t = langevin_temperature(1e-4, 200.0, 100).unwrap();
        assert!((t - 1e-4).abs() < 1e-18);
        assert_eq!(langevin_temperature(2e-4, 200.0, 100).unwrap(), 2.0 * t);
    }

    #[test]
    fn eta_max_and_ln2_factor() {
        let mut i = TheoryInputs::with_decay(1e-3, 1.0, 10);
        i.sigma_sq = 1.0;
        i.f0 = 3.0;
        i.f_star = 1.0;
        i.epsilon = 2.0;
        let m = mixing_prescription(&i).unwrap();
        assert_eq!(m.eta_max, 2.5e-4);
        assert!(m.eta_too_large);
        let c = log_sobolev_bound(1e-3, 1.0, 10).unwrap().c_ls;
        assert_eq!(m.t_min, (c / (2.0 * i.eta) * 2f64.ln()).ceil() as u64);
    }

    #[test]
    fn envelope_endpoints() {
        let mut i = TheoryInputs::with_decay(1.0, 1.0, 4);
        i.eta = 0.1;
        i.l_smooth = 2.0;
        i.sigma_sq = 0.5;
        i.f0 = 7.0;
        i.f_star = 2.0;
        let e = suboptimality_envelope(&i, &[0, 10, 100_000]).unwrap();
        let floor = 0.1 * 2.0 * 0.5 / 4.0;
        assert!((e[0].bound - (5.0 + floor)).abs() < 1e-14);
        assert!(e[1].bound < e[0].bound);
        assert!((e[2].bound - floor).abs() < 1e-14);
        i.eta = 3.0;
        assert!(matches!(suboptimality_envelope(&i, &[0]), Err(Error::InvalidContraction(_))));
    }

    #[test]
    fn pac_bayes_at_inverse_decay() {
        let (lambda, d, f) = (0.1, 50, 2.5);
        let i = TheoryInputs {
            n: 10_000,
            ..TheoryInputs::with_decay(lambda, 1.0, d)
        };
        let p = pac_bayes_bound(f, 0.3, &i).unwrap();
        let want = f / lambda + 25.0 * (1.0 + 1.0 / (lambda * lambda)).ln() + 25.0 * (lambda * lambda / (2.0 * PI)).ln();
        assert!((p.kl_term - want).abs() < 1e-12 * want.abs());
        assert!(!p.valid && p.bound.is_none());
    }

    #[test]
    fn unit_decay_gives_log_two_form() {
        let i = TheoryInputs::with_decay(1.0, 1.0, 8);
        let p = pac_bayes_bound(3.0, 0.1, &i).unwrap();
        let want = 3.0 + 4.0 * 2f64.ln() + 4.0 * (1.0 / (2.0 * PI)).ln();
        assert!((p.kl_term - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn pac_bayes_validity_and_limits() {
        let mut i = TheoryInputs::with_decay(1e-3, 1.0, 100);
        i.beta = 1e6;
        i.n = 100;
        let p = pac_bayes_bound(1.0, 0.2, &i).unwrap();
        let b = p.bound.unwrap();
        assert!(p.valid && b > 0.2);
        i.n = 1_000_000_000_000;
        let far = pac_bayes_bound(1.0, 0.2, &i).unwrap();
        let fb = far.bound.unwrap();
        assert!(fb < b && fb - 0.2 < 1e-2);
        i.n = 1;
        assert!(pac_bayes_bound(1.0, 0.2, &i).is_err());
    }

    #[test]
    fn report_serializes() {
        let mut i = TheoryInputs::with_decay(1.0, 1.0, 4);
        i.eta = 0.1;
        let r = BoundReport::build(&i, 1.0, 0.5, &[0, 1, 2], Some(8.0)).unwrap();
        assert!(r.beta_mismatch);
        let json = r.to_json().unwrap();
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.inputs, i);
        let mut buf = Vec::new();
        r.write_envelope_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("step,bound"));
        assert_eq!(text.lines().count(), 4);
    }
}

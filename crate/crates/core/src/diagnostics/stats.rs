use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Ordinary least squares fit `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; infinite with fewer than three points.
    pub slope_std_err: f64,
    pub n: usize,
}

impl LinearFit {
    /// `|slope| < k·slope_std_err`, with an exact zero slope always counting.
    pub fn indistinguishable_from_zero(&self, k: f64) -> bool {
        self.slope == 0.0 || self.slope.abs() < k * self.slope_std_err
    }

    /// Two-sided 95% t-interval for the slope.
    pub fn slope_ci95(&self) -> (f64, f64) {
        if self.n < 3 || !self.slope_std_err.is_finite() {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        let t = t_quantile(0.975, (self.n - 2) as f64);
        (self.slope - t * self.slope_std_err, self.slope + t * self.slope_std_err)
    }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("a linear fit needs at least two points"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("a linear fit needs at least two distinct x values"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_std_err = if n > 2 {
        let ssr: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        (ssr / (nf - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_std_err,
        n,
    })
}

fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// `std_dev / |mean|`, `None` when the mean is numerically zero.
    pub cv: Option<f64>,
    pub ci95: (f64, f64),
    pub shapiro_w: f64,
    pub normality_p: f64,
}

pub const MIN_VARIANCE_SAMPLES: usize = 8;

pub fn variance_report(samples: &[f64]) -> Result<VarianceReport> {
    let n = samples.len();
    if n < MIN_VARIANCE_SAMPLES {
        return Err(Error::invalid(format!(
            "variance report needs at least {MIN_VARIANCE_SAMPLES} samples, got {n}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("variance report samples must be finite"));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    let std_dev = var.sqrt();
    let scale = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let cv = if mean.abs() <= 1e-12 * scale || mean == 0.0 {
        None
    } else {
        Some(std_dev / mean.abs())
    };
    let half = t_quantile(0.975, nf - 1.0) * std_dev / nf.sqrt();
    let (shapiro_w, normality_p) = shapiro_wilk(samples)?;
    Ok(VarianceReport {
        n,
        mean,
        std_dev,
        cv,
        ci95: (mean - half, mean + half),
        shapiro_w,
        normality_p,
    })
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro–Wilk W statistic and p-value, Royston's approximation for
/// `3 ≤ n ≤ 5000`. Constant samples return `(1, 1)`.
pub fn shapiro_wilk(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::invalid(format!("Shapiro-Wilk needs 3..=5000 samples, got {n}")));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss <= 1e-300 || x[n - 1] - x[0] <= 1e-15 * x[n - 1].abs().max(x[0].abs()) {
        return Ok((1.0, 1.0));
    }
    let std_normal = Normal::standard();
    let a: Vec<f64> = if n == 3 {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        vec![-r, 0.0, r]
    } else {
        let m: Vec<f64> = (1..=n)
            .map(|i| std_normal.inverse_cdf((i as f64 - 0.375) / (nf + 0.25)))
            .collect();
        let msq: f64 = m.iter().map(|v| v * v).sum();
        let u = 1.0 / nf.sqrt();
        let an = m[n - 1] / msq.sqrt()
            + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        let mut a = vec![0.0; n];
        if n > 5 {
            let an1 = m[n - 2] / msq.sqrt()
                + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            let phi = (msq - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2))
                / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            for i in 2..n - 2 {
                a[i] = m[i] / phi.sqrt();
            }
            a[n - 2] = an1;
            a[1] = -an1;
        } else {
            let phi = (msq - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an * an);
            for i in 1..n - 1 {
                a[i] = m[i] / phi.sqrt();
            }
        }
        a[n - 1] = an;
        a[0] = -an;
        a
    };
    let num: f64 = a.iter().zip(&x).map(|(a, x)| a * x).sum();
    let w = (num * num / ss).min(1.0);
    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = 0.459 * nf - 2.273;
        let y = -(gamma - (1.0 - w).ln()).ln();
        let mu = poly(&[0.5440, -0.39978, 0.025054, -0.0006714], nf);
        let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
        1.0 - std_normal.cdf((y - mu) / sigma)
    } else {
        let y = (1.0 - w).ln();
        let ln_n = nf.ln();
        let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n);
        let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp();
        1.0 - std_normal.cdf((y - mu) / sigma)
    };
    Ok((w, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_has_zero_slope_error() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!(f.slope_std_err < 1e-14);
    }

    #[test]
    fn slope_std_err_matches_hand_value() {
        // residuals (0.5, -1, 0.5) about the fit y = 2x
        let f = linear_fit(&[0.0, 1.0, 2.0], &[0.5, 1.0, 4.5]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.slope_std_err - (1.5f64 / 2.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn degenerate_fits_rejected() {
        assert!(linear_fit(&[1.0], &[1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(linear_fit(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn constant_samples_have_zero_cv() {
        let r = variance_report(&[4.0; 10]).unwrap();
        assert_eq!(r.cv, Some(0.0));
        assert_eq!(r.ci95, (4.0, 4.0));
    }

    #[test]
    fn zero_mean_flags_cv() {
        let s = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 0.5, -0.5];
        assert_eq!(variance_report(&s).unwrap().cv, None);
    }

    #[test]
    fn too_few_samples() {
        assert!(variance_report(&[1.0; 7]).is_err());
    }

    #[test]
    fn t_interval_hand_value() {
        // n = 9, mean 5, sample std 3: half width t_{0.975,8}·1
        let s = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let r = variance_report(&s).unwrap();
        let sd = (60.0f64 / 8.0).sqrt();
        assert!((r.std_dev - sd).abs() < 1e-14);
        let half = 2.306004135204166 * sd / 3.0;
        assert!((r.ci95.1 - 5.0 - half).abs() < 1e-9);
    }

    // Reference W and p values from an independent implementation of the same
    // algorithm.
    #[test]
    fn shapiro_wilk_reference_values() {
        let normal40 = [
            0.12573, -0.132105, 0.640423, 0.1049, -0.535669, 0.361595, 1.304, 0.947081, -0.703735,
            -1.265421, -0.623274, 0.041326, -2.325031, -0.218792, -1.245911, -0.732267, -0.544259,
            -0.3163, 0.411631, 1.042513, -0.128535, 1.366463, -0.665195, 0.35151, 0.90347, 0.094012,
            -0.743499, -0.921725, -0.457726, 0.220195, -1.009618, -0.209176, -0.159225, 0.540846,
            0.214659, 0.355373, -0.653829, -0.129614, 0.783975, 1.493431,
        ];
        let expo25 = [
            1.465805, 1.124238, 1.89805, 0.598992, 0.468685, 0.817107, 0.264469, 0.745822, 0.106062,
            1.646947, 2.279238, 0.552102, 3.162731, 0.107703, 0.279543, 0.297249, 0.763557, 0.935745,
            0.535943, 0.124554, 1.997991, 0.497464, 0.11357, 0.771236, 0.2965,
        ];
        let cases: [(&[f64], f64, f64); 4] = [
            (&[1.0, 2.0, 4.0], 0.9642857142857142, 0.6368868450289689),
            (&[2.1, 3.5, 0.7, 4.4, 1.9, 2.8, 3.3], 0.9848682356787938, 0.9797225210867334),
            (&normal40, 0.981316590858, 0.7382270879540039),
            (&expo25, 0.8481240738079809, 0.0016229067804441446),
        ];
        for (s, w, p) in cases {
            let (gw, gp) = shapiro_wilk(s).unwrap();
            assert!((gw - w).abs() < 1e-6, "n = {}: W {gw} vs {w}", s.len());
            assert!((gp - p).abs() < 1e-4 * p.max(1e-2), "n = {}: p {gp} vs {p}", s.len());
        }
        assert_eq!(shapiro_wilk(&[2.0; 5]).unwrap(), (1.0, 1.0));
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{check_len, dot, EnergyOracle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDistribution {
    Gaussian,
    Rademacher,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// Number of probes M.
    pub count: usize,
    pub distribution: ProbeDistribution,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            count: 64,
            distribution: ProbeDistribution::Rademacher,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn rademacher(count: usize, seed: u64) -> Self {
        ProbeConfig {
            count,
            distribution: ProbeDistribution::Rademacher,
            seed,
        }
    }

    pub fn gaussian(count: usize, seed: u64) -> Self {
        ProbeConfig {
            count,
            distribution: ProbeDistribution::Gaussian,
            seed,
        }
    }

    /// Probe `index`, drawn from its own ChaCha stream so that every probe
    /// depends only on `(seed, index)`.
    pub fn probe(&self, index: usize, dim: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        match self.distribution {
            ProbeDistribution::Rademacher => (0..dim)
                .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
                .collect(),
            ProbeDistribution::Gaussian => (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEstimate {
    pub estimate: f64,
    /// Sample standard deviation over √M; infinite when M = 1.
    pub std_err: f64,
    /// Per-probe quadratic forms ⟨v, Hv⟩.
    pub samples: Vec<f64>,
}

pub(crate) fn mean_and_std_err(samples: &[f64]) -> (f64, f64) {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    if samples.len() < 2 {
        return (mean, f64::INFINITY);
    }
    // shifted by the first sample, so identical samples give exactly zero
    let x0 = samples[0];
    let (s1, s2) = samples
        .iter()
        .fold((0.0, 0.0), |(a, b), x| (a + (x - x0), b + (x - x0) * (x - x0)));
    let var = ((s2 - s1 * s1 / m) / (m - 1.0)).max(0.0);
    (mean, (var / m).sqrt())
}

/// Hutchinson estimate of `Tr ∇²F(θ)` from M probes.
pub fn hutchinson_trace(
    oracle: &(impl EnergyOracle + ?Sized),
    theta: &[f64],
    probes: &ProbeConfig,
) -> Result<TraceEstimate> {
    if probes.count == 0 {
        return Err(Error::invalid("probe count M must be at least 1"));
    }
    let d = oracle.dim();
    check_len(d, theta.len())?;
    let workers = rayon::current_num_threads().max(1);
    let chunk = probes.count.div_ceil(workers);
    let indices: Vec<usize> = (0..probes.count).collect();
    let samples: Vec<f64> = indices
        .par_chunks(chunk)
        .map(|idx| -> Result<Vec<f64>> {
            let vs: Vec<Vec<f64>> = idx.iter().map(|&i| probes.probe(i, d)).collect();
            let hvs = oracle.hvp_many(theta, &vs)?;
            hvs.iter()
                .zip(&vs)
                .map(|(hv, v)| {
                    check_len(d, hv.len())?;
                    Ok(dot(v, hv))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let (estimate, std_err) = mean_and_std_err(&samples);
    Ok(TraceEstimate {
        estimate,
        std_err,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::SyntheticEnergy;

    #[test]
    fn rademacher_is_exact_on_identity() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 50);
        let t = hutchinson_trace(&e, &[0.0; 50], &ProbeConfig::rademacher(16, 3)).unwrap();
        assert!(t.samples.iter().all(|&s| s == 50.0));
        assert_eq!(t.estimate, 50.0);
        assert_eq!(t.std_err, 0.0);
    }

    #[test]
    fn small_decay_quadratic_trace() {
        let e = SyntheticEnergy::pure_quadratic(1e-3, 1000);
        let t = hutchinson_trace(&e, &vec![0.5; 1000], &ProbeConfig::rademacher(8, 0)).unwrap();
        assert!((t.estimate - 1.0).abs() < 1e-12);
    }

    #[test]
    fn probes_are_reproducible_and_independent_of_count() {
        let a = ProbeConfig::rademacher(4, 9);
        let b = ProbeConfig::rademacher(100, 9);
        assert_eq!(a.probe(2, 30), b.probe(2, 30));
        assert_ne!(a.probe(2, 30), a.probe(3, 30));
    }

    #[test]
    fn zero_probes_rejected() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 3);
        assert!(hutchinson_trace(&e, &[0.0; 3], &ProbeConfig::rademacher(0, 0)).is_err());
    }

    #[test]
    fn wrong_theta_dimension() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 3);
        assert!(matches!(
            hutchinson_trace(&e, &[0.0; 4], &ProbeConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}

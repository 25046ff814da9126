use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hutchinson::ProbeConfig;
use super::psi::{psi_estimate, DiagnosticRecord};
use super::stats::{linear_fit, LinearFit};
use crate::error::{Error, Result};
use crate::oracle::{check_len, norm_sq, EnergyOracle};

#[derive(Clone, Debug, PartialEq)]
pub struct RayRow {
    pub direction_id: usize,
    pub radius: f64,
    pub record: DiagnosticRecord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayTable {
    pub rows: Vec<RayRow>,
    /// Per-direction fit of Ψ against ‖θ‖² over the upper half of the radii.
    pub fits: Vec<Option<LinearFit>>,
    /// Fit over the upper half of the radii of all directions together.
    pub pooled: Option<LinearFit>,
}

/// Column layout of the ray CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayCsvRow {
    pub direction_id: usize,
    pub radius: f64,
    pub theta_norm_sq: f64,
    pub trace_est: f64,
    pub trace_std_err: f64,
    pub grad_norm_sq: f64,
    pub psi_est: f64,
    pub s: f64,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
}

pub const RAY_CSV_COLUMNS: [&str; 10] = [
    "direction_id",
    "radius",
    "theta_norm_sq",
    "trace_est",
    "trace_std_err",
    "grad_norm_sq",
    "psi_est",
    "s",
    "M",
    "seed",
];

impl From<&RayRow> for RayCsvRow {
    fn from(r: &RayRow) -> Self {
        RayCsvRow {
            direction_id: r.direction_id,
            radius: r.radius,
            theta_norm_sq: r.record.theta_norm_sq,
            trace_est: r.record.trace_est,
            trace_std_err: r.record.trace_std_err,
            grad_norm_sq: r.record.grad_norm_sq,
            psi_est: r.record.psi_est,
            s: r.record.s,
            m: r.record.m,
            seed: r.record.seed,
        }
    }
}

impl RayTable {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(RayCsvRow::from(row))
                .map_err(|e| Error::invalid(format!("csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn direction(&self, id: usize) -> impl Iterator<Item = &RayRow> {
        self.rows.iter().filter(move |r| r.direction_id == id)
    }
}

/// `count` directions drawn uniformly from the unit sphere in `R^dim`.
pub fn random_unit_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm_sq(&v).sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Probe seed for one ray: shared by every radius on the ray.
pub fn ray_probe_seed(base: u64, direction_id: usize) -> u64 {
    base.wrapping_add(direction_id as u64)
}

/// Evaluates Ψ_s at `θ₀ + r·u` for every direction `u` and radius `r`.
pub fn radial_ray_probe(
    oracle: &(impl EnergyOracle + ?Sized),
    theta0: &[f64],
    directions: &[Vec<f64>],
    radii: &[f64],
    s: f64,
    probes: &ProbeConfig,
) -> Result<RayTable> {
    if radii.is_empty() {
        return Err(Error::invalid("radial probe needs at least one radius"));
    }
    if directions.is_empty() {
        return Err(Error::invalid("radial probe needs at least one direction"));
    }
    if radii[0] <= 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) || radii.iter().any(|r| !r.is_finite()) {
        return Err(Error::invalid("radii must be positive, finite and strictly increasing"));
    }
    let d = oracle.dim();
    check_len(d, theta0.len())?;
    for u in directions {
        check_len(d, u.len())?;
        let n = norm_sq(u).sqrt();
        if (n - 1.0).abs() > 1e-8 {
            return Err(Error::invalid(format!("direction has norm {n}, expected 1")));
        }
    }
    let grid: Vec<(usize, usize)> = (0..directions.len())
        .flat_map(|k| (0..radii.len()).map(move |j| (k, j)))
        .collect();
    let rows = grid
        .par_iter()
        .map(|&(k, j)| {
            let r = radii[j];
            let theta: Vec<f64> = theta0.iter().zip(&directions[k]).map(|(t, u)| t + r * u).collect();
            let cfg = ProbeConfig {
                seed: ray_probe_seed(probes.seed, k),
                ..*probes
            };
            Ok(RayRow {
                direction_id: k,
                radius: r,
                record: psi_estimate(oracle, &theta, s, &cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let upper = radii.len() / 2;
    let fit_rows = |rows: &mut dyn Iterator<Item = &RayRow>| {
        let (x, y): (Vec<f64>, Vec<f64>) = rows
            .map(|r| (r.record.theta_norm_sq, r.record.psi_est))
            .unzip();
        linear_fit(&x, &y).ok()
    };
    let in_window = |r: &&RayRow| r.radius >= radii[upper];
    let fits = (0..directions.len())
        .map(|k| fit_rows(&mut rows.iter().filter(|r| r.direction_id == k).filter(in_window)))
        .collect();
    let pooled = fit_rows(&mut rows.iter().filter(in_window));
    Ok(RayTable { rows, fits, pooled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::SyntheticEnergy;

    fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn pure_quadratic_slope_is_lambda_squared_over_s() {
        let (lambda, s, d) = (0.05, 2.0, 30);
        let e = SyntheticEnergy::pure_quadratic(lambda, d);
        let dirs = random_unit_directions(d, 3, 1);
        let t = radial_ray_probe(&e, &vec![0.1; d], &dirs, &geometric(1.0, 100.0, 8), s, &ProbeConfig::rademacher(4, 0))
            .unwrap();
        assert_eq!(t.rows.len(), 24);
        let want = lambda * lambda / s;
        for f in t.fits.iter().chain(std::iter::once(&t.pooled)) {
            let f = f.unwrap();
            assert_eq!(f.n, if f.n == 12 { 12 } else { 4 });
            assert!((f.slope - want).abs() < 1e-6 * want, "{} vs {want}", f.slope);
        }
    }

    #[test]
    fn bounded_field_without_decay_has_no_slope() {
        let e = SyntheticEnergy::quadratic_plus_bounded(0.0, 20);
        let dirs = random_unit_directions(20, 2, 5);
        let t = radial_ray_probe(&e, &[0.0; 20], &dirs, &geometric(10.0, 1000.0, 10), 1.0, &ProbeConfig::rademacher(16, 3))
            .unwrap();
        let f = t.pooled.unwrap();
        assert!(f.indistinguishable_from_zero(2.0), "{f:?}");
    }

    #[test]
    fn probe_seed_shared_along_ray() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 4);
        let dirs = random_unit_directions(4, 2, 0);
        let t = radial_ray_probe(&e, &[0.0; 4], &dirs, &[1.0, 2.0], 1.0, &ProbeConfig::rademacher(2, 10)).unwrap();
        for r in &t.rows {
            assert_eq!(r.record.seed, 10 + r.direction_id as u64);
        }
    }

    #[test]
    fn invalid_grids_rejected() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 2);
        let u = vec![vec![1.0, 0.0]];
        let p = ProbeConfig::default();
        assert!(radial_ray_probe(&e, &[0.0; 2], &u, &[], 1.0, &p).is_err());
        assert!(radial_ray_probe(&e, &[0.0; 2], &u, &[2.0, 1.0], 1.0, &p).is_err());
        assert!(radial_ray_probe(&e, &[0.0; 2], &[vec![2.0, 0.0]], &[1.0], 1.0, &p).is_err());
    }

    #[test]
    fn csv_header_is_fixed() {
        let e = SyntheticEnergy::pure_quadratic(1.0, 2);
        let t = radial_ray_probe(&e, &[0.0; 2], &[vec![0.0, 1.0]], &[1.0], 1.0, &ProbeConfig::rademacher(2, 0)).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), RAY_CSV_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 2);
    }
}

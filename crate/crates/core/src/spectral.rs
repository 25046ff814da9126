//! Top-k Hessian eigenvalues by Lanczos iteration on Hessian-vector products.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{linear_fit, LinearFit};
use crate::error::{Error, Result};
use crate::oracle::{check_len, dot, norm_sq, EnergyOracle};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_TOL: f64 = 1e-8;

/// Scope of the median in `max_median_ratio`, recorded in output metadata.
pub const MEDIAN_SCOPE: &str = "median of the returned top-k Ritz values";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanczosConfig {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl LanczosConfig {
    /// `max_iter = 4k` and `tol = 1e-8`.
    pub fn new(k: usize, seed: u64) -> Self {
        LanczosConfig {
            k,
            max_iter: 4 * k,
            tol: DEFAULT_TOL,
            seed,
        }
    }
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig::new(DEFAULT_K, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    /// Largest Ritz values, descending.
    pub ritz_values: Vec<f64>,
    pub k: usize,
    pub iterations: usize,
    /// `β_m·|last component of the Ritz vector|`, one per Ritz value.
    pub residual_norms: Vec<f64>,
    /// Number of leading Ritz values whose residual is below `tol·|value|`.
    pub converged: usize,
    /// The Krylov space became invariant before `k` values were available.
    pub breakdown: bool,
    /// Largest `|Ritz value|` at either end of the final tridiagonal spectrum.
    pub spectral_radius: f64,
    pub max_median_ratio: f64,
    pub theta_norm_sq: f64,
    /// Top Ritz value after each iteration.
    pub top_history: Vec<f64>,
}

impl SpectralSummary {
    pub fn all_converged(&self) -> bool {
        self.converged == self.ritz_values.len()
    }
}

/// A Lanczos run together with its orthonormal Krylov basis.
#[derive(Clone, Debug)]
pub struct LanczosRun {
    pub summary: SpectralSummary,
    pub basis: Vec<Vec<f64>>,
}

fn median(sorted_desc: &[f64]) -> f64 {
    let n = sorted_desc.len();
    if n % 2 == 1 {
        sorted_desc[n / 2]
    } else {
        0.5 * (sorted_desc[n / 2 - 1] + sorted_desc[n / 2])
    }
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = alpha.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(t);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let last = order.iter().map(|&i| eig.eigenvectors[(m - 1, i)].abs()).collect();
    (values, last)
}

fn orthogonalize(w: &mut [f64], basis: &[Vec<f64>]) {
    // two classical Gram-Schmidt passes
    for _ in 0..2 {
        for q in basis {
            let c = dot(w, q);
            w.iter_mut().zip(q).for_each(|(x, q)| *x -= c * q);
        }
    }
}

/// Lanczos with full reorthogonalization, returning the basis as well.
pub fn lanczos(oracle: &(impl EnergyOracle + ?Sized), theta: &[f64], cfg: &LanczosConfig) -> Result<LanczosRun> {
    let d = oracle.dim();
    check_len(d, theta.len())?;
    if cfg.k == 0 || cfg.k > cfg.max_iter || cfg.max_iter > d {
        return Err(Error::invalid(format!(
            "Lanczos needs 1 ≤ k ≤ max_iter ≤ d, got k = {}, max_iter = {}, d = {d}",
            cfg.k, cfg.max_iter
        )));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::invalid("Lanczos tolerance must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n0 = norm_sq(&q).sqrt();
    q.iter_mut().for_each(|x| *x /= n0);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(cfg.max_iter);
    let mut alpha = Vec::with_capacity(cfg.max_iter);
    let mut beta: Vec<f64> = Vec::with_capacity(cfg.max_iter);
    let mut top_history = Vec::with_capacity(cfg.max_iter);
    let mut breakdown = false;
    let mut scale = 0.0f64;
    let (mut values, mut last) = (Vec::new(), Vec::new());
    let mut b_last = 0.0;
    let mut converged = 0;

    while basis.len() < cfg.max_iter {
        let mut w = oracle.hvp(theta, &q)?;
        check_len(d, w.len())?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                step: basis.len(),
                what: "Hessian-vector product".into(),
            });
        }
        let a = dot(&q, &w);
        alpha.push(a);
        basis.push(q);
        orthogonalize(&mut w, &basis);
        let b = norm_sq(&w).sqrt();
        scale = scale.max(a.abs()).max(b);

        (values, last) = tridiagonal_eigen(&alpha, &beta);
        top_history.push(values[0]);
        b_last = b;
        let want = cfg.k.min(values.len());
        converged = (0..want)
            .take_while(|&i| b * last[i] <= cfg.tol * values[i].abs())
            .count();

        if b <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            // invariant subspace: every Ritz value is exact
            breakdown = values.len() < cfg.k;
            b_last = 0.0;
            converged = want;
            break;
        }
        if converged >= cfg.k {
            break;
        }
        beta.push(b);
        q = w.into_iter().map(|x| x / b).collect();
    }

    let take = cfg.k.min(values.len());
    let ritz_values: Vec<f64> = values[..take].to_vec();
    let residual_norms: Vec<f64> = last[..take].iter().map(|s| b_last * s).collect();
    let spectral_radius = values[0].abs().max(values[values.len() - 1].abs());
    let med = median(&ritz_values);
    Ok(LanczosRun {
        summary: SpectralSummary {
            k: cfg.k,
            iterations: basis.len(),
            residual_norms,
            converged: converged.min(take),
            breakdown,
            spectral_radius,
            max_median_ratio: ritz_values[0] / med,
            theta_norm_sq: norm_sq(theta),
            top_history,
            ritz_values,
        },
        basis,
    })
}

pub fn lanczos_topk(
    oracle: &(impl EnergyOracle + ?Sized),
    theta: &[f64],
    cfg: &LanczosConfig,
) -> Result<SpectralSummary> {
    Ok(lanczos(oracle, theta, cfg)?.summary)
}

/// One sweep point: an energy, the parameters it is evaluated at, and labels.
pub struct SweepPoint<O> {
    pub checkpoint_id: usize,
    pub step: u64,
    pub oracle: O,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub checkpoint_id: usize,
    pub step: u64,
    pub summary: SpectralSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSweep {
    pub rows: Vec<SweepRow>,
    /// Fit of `spectral_radius` against `‖θ‖`.
    pub fit: LinearFit,
    pub k: usize,
}

pub fn spectral_sweep<O: EnergyOracle>(points: &[SweepPoint<O>], cfg: &LanczosConfig) -> Result<SpectralSweep> {
    if points.len() < 2 {
        return Err(Error::invalid("a spectral sweep needs at least two checkpoints"));
    }
    let rows = points
        .par_iter()
        .map(|p| {
            Ok(SweepRow {
                checkpoint_id: p.checkpoint_id,
                step: p.step,
                summary: lanczos_topk(&p.oracle, &p.theta, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = rows.iter().map(|r| r.summary.theta_norm_sq.sqrt()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.summary.spectral_radius).collect();
    let fit = linear_fit(&x, &y)?;
    Ok(SpectralSweep { rows, fit, k: cfg.k })
}

impl SpectralSweep {
    /// Columns `checkpoint_id, step, theta_norm_sq, k, ritz_1..ritz_k,
    /// spectral_radius, max_median_ratio`; missing Ritz values are empty.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let csv_err = |e: csv::Error| Error::invalid(format!("csv: {e}"));
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["checkpoint_id", "step", "theta_norm_sq", "k"].map(String::from).to_vec();
        header.extend((1..=self.k).map(|i| format!("ritz_{i}")));
        header.extend(["spectral_radius", "max_median_ratio"].map(String::from));
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let s = &r.summary;
            let mut rec = vec![
                r.checkpoint_id.to_string(),
                r.step.to_string(),
                s.theta_norm_sq.to_string(),
                s.k.to_string(),
            ];
            rec.extend((0..self.k).map(|i| s.ritz_values.get(i).map(f64::to_string).unwrap_or_default()));
            rec.push(s.spectral_radius.to_string());
            rec.push(s.max_median_ratio.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

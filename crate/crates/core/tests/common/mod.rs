#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use villani_core::model::{Batch, ModelConfig, Transformer, TransformerLoss};
use villani_core::EnergyOracle;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(n: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub struct Instance {
    pub oracle: TransformerLoss,
    pub theta: Vec<f64>,
}

/// Random small transformer, batch and parameter point. `d` stays under
/// `max_dim`.
pub fn random_instance(seed: u64, max_dim: usize) -> Instance {
    let mut r = rng(seed);
    loop {
        let heads = r.random_range(1..=2);
        let d_model = heads * r.random_range(2..=4);
        let cfg = ModelConfig {
            layers: r.random_range(1..=2),
            d_model,
            heads,
            d_ff: r.random_range(2..=3) * d_model,
            vocab: r.random_range(4..=9),
            context: r.random_range(2..=5),
            ..Default::default()
        };
        let model = Transformer::new(cfg.clone()).unwrap();
        if model.dim() > max_dim {
            continue;
        }
        let seq_len = r.random_range(1..=cfg.context);
        let windows: Vec<Vec<usize>> = (0..r.random_range(1..=3))
            .map(|_| (0..=seq_len).map(|_| r.random_range(0..cfg.vocab)).collect())
            .collect();
        let batch = Batch::from_windows(&windows).unwrap();
        let theta = gaussian(model.dim(), 0.6, &mut r);
        return Instance {
            oracle: TransformerLoss::new(model, batch).unwrap(),
            theta,
        };
    }
}

/// Central-difference gradient, one coordinate at a time.
pub fn fd_gradient(f: &(impl EnergyOracle + ?Sized), theta: &[f64], h: f64) -> Vec<f64> {
    (0..theta.len())
        .into_par_iter()
        .map(|i| {
            let mut t = theta.to_vec();
            t[i] = theta[i] + h;
            let up = f.value(&t).unwrap();
            t[i] = theta[i] - h;
            let down = f.value(&t).unwrap();
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central difference of the gradient along `v`.
pub fn fd_hvp(f: &(impl EnergyOracle + ?Sized), theta: &[f64], v: &[f64], eps: f64) -> Vec<f64> {
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, v)| t + eps * v).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, v)| t - eps * v).collect();
    let gp = f.grad(&plus).unwrap();
    let gm = f.grad(&minus).unwrap();
    gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
}

/// Largest component error relative to the component magnitude, with a floor of
/// `1e-3·‖reference‖∞` so that near-zero components are judged on the scale of
/// the vector rather than on their own.
pub fn max_rel_error(got: &[f64], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (1e-3 * scale).max(1e-300);
    got.iter()
        .zip(reference)
        .map(|(g, r)| (g - r).abs() / r.abs().max(g.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

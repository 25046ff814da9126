use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{gaussian_into, TrainingProblem};
use crate::error::{Error, Result};
use crate::oracle::{check_len, norm_sq};

/// Weight-decay grid of the sweep helper.
pub const LAMBDA_GRID: [f64; 4] = [0.0, 1e-4, 1e-3, 1e-2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    None,
    /// `√(2η_k β⁻¹)·Z` with `Z ~ N(0, I)`.
    Langevin { beta: f64 },
    /// `std·Z`, independent of the step size.
    Fixed { std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Linear warm-up over `warmup_steps`, then cosine decay to zero.
    WarmupCosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    /// Adam moments with decoupled decay; traces are marked non-comparable.
    AdamW,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub lambda: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub noise: NoiseConfig,
    pub schedule: Schedule,
    pub warmup_steps: u64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Cadence of the gradient-noise measurement; 0 disables it.
    pub sigma_every: u64,
    pub sigma_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1.0,
            lambda: 1e-3,
            steps: 2000,
            batch_size: 16,
            noise: NoiseConfig::None,
            schedule: Schedule::WarmupCosine,
            warmup_steps: 200,
            optimizer: Optimizer::Sgd,
            seed: 0,
            checkpoint_every: 100,
            log_every: 50,
            sigma_every: 50,
            sigma_batches: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("train.eta must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("train.lambda must be nonnegative"));
        }
        if self.checkpoint_every == 0 || self.log_every == 0 {
            return Err(Error::invalid("train.checkpoint_every and train.log_every must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size must be positive"));
        }
        if self.sigma_every > 0 && self.sigma_batches == 0 {
            return Err(Error::invalid("train.sigma_batches must be positive"));
        }
        match self.noise {
            NoiseConfig::Langevin { beta } if !(beta > 0.0 && beta.is_finite()) => {
                Err(Error::invalid("train.noise.beta must be positive"))
            }
            NoiseConfig::Fixed { std } if !(std >= 0.0 && std.is_finite()) => {
                Err(Error::invalid("train.noise.std must be nonnegative"))
            }
            _ => Ok(()),
        }
    }

    /// Step size at step `k`.
    pub fn learning_rate(&self, k: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.eta,
            Schedule::WarmupCosine => {
                if k < self.warmup_steps {
                    self.eta * (k + 1) as f64 / self.warmup_steps as f64
                } else {
                    let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
                    let t = ((k - self.warmup_steps) as f64 / span).min(1.0);
                    0.5 * self.eta * (1.0 + (PI * t).cos())
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub lr: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub theta_norm_sq: f64,
    /// `‖∇F(θ)‖` on the full data term.
    pub grad_norm: f64,
    /// Latest measured `E‖g_batch − ∇L‖²`.
    pub sigma_sq: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub step: u64,
    pub theta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    pub config: TrainConfig,
    pub rows: Vec<TraceRow>,
    /// Parameters at step 0, every `checkpoint_every` steps and the last step.
    pub snapshots: Vec<Snapshot>,
    pub final_theta: Vec<f64>,
    /// Plain SGD runs are comparable with the theoretical envelope.
    pub comparable: bool,
}

impl TrainTrace {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::invalid(format!("csv: {e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Mean of the measured gradient-noise values.
    pub fn mean_sigma_sq(&self) -> Option<f64> {
        let xs: Vec<f64> = self.rows.iter().filter_map(|r| r.sigma_sq).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }

    /// Rows with wall time zeroed, for reproducibility comparisons.
    pub fn rows_without_time(&self) -> Vec<TraceRow> {
        self.rows
            .iter()
            .map(|r| TraceRow {
                wall_time_s: 0.0,
                ..r.clone()
            })
            .collect()
    }
}

fn non_finite(step: u64, what: &str, theta: &[f64]) -> Error {
    Error::NonFinite {
        step: step as usize,
        what: format!(
            "{what} (‖θ‖² = {:e}, non-finite parameters: {})",
            norm_sq(theta),
            theta.iter().filter(|x| !x.is_finite()).count()
        ),
    }
}

/// One update `θ ← θ − η(g + λθ) + noise` followed by the problem's projection.
pub fn sgd_step(
    problem: &(impl TrainingProblem + ?Sized),
    theta: &mut [f64],
    grad_data: &[f64],
    lr: f64,
    lambda: f64,
    noise: NoiseConfig,
    rng: &mut ChaCha8Rng,
) {
    theta
        .iter_mut()
        .zip(grad_data)
        .for_each(|(t, g)| *t -= lr * (g + lambda * *t));
    add_noise(theta, lr, noise, rng);
    problem.project(theta);
}

fn add_noise(theta: &mut [f64], lr: f64, noise: NoiseConfig, rng: &mut ChaCha8Rng) {
    match noise {
        NoiseConfig::None => {}
        NoiseConfig::Langevin { beta } => gaussian_into(theta, (2.0 * lr / beta).sqrt(), rng),
        NoiseConfig::Fixed { std } => gaussian_into(theta, std, rng),
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn step(&mut self, theta: &mut [f64], g: &[f64], lr: f64, lambda: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            let update = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
            theta[i] -= lr * (update + lambda * theta[i]);
        }
    }
}

/// Runs the configured optimizer from `theta0`.
///
/// Minibatch sampling, injected noise and the noise measurement draw from
/// separate streams of the seed, so runs that differ only in λ or noise see
/// the same data order.
pub fn train(problem: &(impl TrainingProblem + ?Sized), theta0: &[f64], cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    check_len(problem.dim(), theta0.len())?;
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
        r.set_stream(s);
        r
    };
    let (mut data_rng, mut noise_rng, mut sigma_rng) = (stream(0), stream(1), stream(2));
    let start = Instant::now();
    let mut theta = theta0.to_vec();
    problem.project(&mut theta);
    let mut rows = Vec::new();
    let mut snapshots = vec![Snapshot {
        step: 0,
        theta: theta.clone(),
    }];
    let mut adam = Adam {
        m: vec![0.0; theta.len()],
        v: vec![0.0; theta.len()],
        t: 0,
    };
    let mut sigma_sq = None;

    for k in 0..=cfg.steps {
        let log_now = k % cfg.log_every == 0 || k == cfg.steps;
        let sigma_now = cfg.sigma_every > 0 && k % cfg.sigma_every == 0;
        if log_now || sigma_now {
            let (l, g) = problem.full(&theta)?;
            if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(non_finite(k, "full loss or gradient", &theta));
            }
            if sigma_now {
                let mut acc = 0.0;
                for _ in 0..cfg.sigma_batches {
                    let gb = problem.stochastic_grad(&theta, cfg.batch_size, &mut sigma_rng)?;
                    acc += gb.iter().zip(&g).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                sigma_sq = Some(acc / cfg.sigma_batches as f64);
            }
            if log_now {
                let n2 = norm_sq(&theta);
                let grad_f: f64 = g
                    .iter()
                    .zip(&theta)
                    .map(|(g, t)| (g + cfg.lambda * t).powi(2))
                    .sum();
                rows.push(TraceRow {
                    step: k,
                    lr: cfg.learning_rate(k),
                    f: l + 0.5 * cfg.lambda * n2,
                    l,
                    theta_norm_sq: n2,
                    grad_norm: grad_f.sqrt(),
                    sigma_sq,
                    wall_time_s: start.elapsed().as_secs_f64(),
                });
            }
        }
        if k > 0 && (k % cfg.checkpoint_every == 0 || k == cfg.steps) {
            snapshots.push(Snapshot {
                step: k,
                theta: theta.clone(),
            });
        }
        if k == cfg.steps {
            break;
        }
        let g = problem.stochastic_grad(&theta, cfg.batch_size, &mut data_rng)?;
        if g.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(k, "stochastic gradient", &theta));
        }
        let lr = cfg.learning_rate(k);
        match cfg.optimizer {
            Optimizer::Sgd => sgd_step(problem, &mut theta, &g, lr, cfg.lambda, cfg.noise, &mut noise_rng),
            Optimizer::AdamW => {
                adam.step(&mut theta, &g, lr, cfg.lambda);
                add_noise(&mut theta, lr, cfg.noise, &mut noise_rng);
                problem.project(&mut theta);
            }
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(k + 1, "parameters after update", &theta));
        }
    }
    Ok(TrainTrace {
        config: cfg.clone(),
        rows,
        snapshots,
        final_theta: theta,
        comparable: cfg.optimizer == Optimizer::Sgd,
    })
}

/// Trains once per λ with otherwise identical configuration and data order.
pub fn lambda_sweep(
    problem: &(impl TrainingProblem + ?Sized),
    theta0: &[f64],
    base: &TrainConfig,
    lambdas: &[f64],
) -> Result<Vec<(f64, TrainTrace)>> {
    lambdas
        .par_iter()
        .map(|&lambda| {
            let cfg = TrainConfig {
                lambda,
                ..base.clone()
            };
            Ok((lambda, train(problem, theta0, &cfg)?))
        })
        .collect()
}

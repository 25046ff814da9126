use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use villani_core::landscape::SyntheticEnergy;
use villani_core::model::{Transformer, TransformerLoss};
use villani_core::spectral::{lanczos_topk, LanczosConfig};
use villani_core::theory::{log_sobolev_bound, suboptimality_envelope, BoundReport, TheoryInputs};
use villani_core::trainer::{train, NoiseConfig, NoisyGradient, Schedule, TrainConfig, TraceRow};
use villani_core::{EnergyOracle, Error, Regularized};

use super::{check_architecture, checkpoint_series, corpus, leading_batch, run_dir_of, toy_problem, Context, TRACE_FILE};
use crate::config::{BetaSource, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::output::{read_rows, RunDir};
use crate::plot::{Chart, Scale, Series};

#[derive(Serialize)]
struct EnvelopeRow {
    step: u64,
    mean_suboptimality: f64,
    min_suboptimality: f64,
    max_suboptimality: f64,
    envelope: f64,
}

#[derive(Serialize)]
struct BenchmarkSummary {
    f_star: f64,
    l_smooth: f64,
    seeds: u64,
    /// Largest ratio of mean suboptimality to the envelope over logged steps.
    worst_ratio: f64,
    within_envelope: bool,
    report: BoundReport,
}

#[derive(Serialize)]
struct Failure {
    status: &'static str,
    error: String,
    lambda: f64,
}

pub(super) fn mean_noise(rows: &[TraceRow]) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter_map(|r| r.sigma_sq).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// β from the configured source; `eta·σ²/(2d)` is the inverse temperature of
/// the measured noise.
pub(super) fn beta_for(cfg: &ExperimentConfig, lambda: f64, d: usize, noise: Option<f64>) -> CliResult<f64> {
    match cfg.theory.beta_source {
        BetaSource::InverseDecay => Ok(1.0 / lambda),
        BetaSource::Fixed => cfg
            .theory
            .beta
            .ok_or_else(|| CliError::Usage("theory.beta_source = \"fixed\" needs theory.beta".into())),
        BetaSource::Noise => {
            let sq = noise.ok_or_else(|| {
                CliError::runtime("no measured gradient noise in the trace; set theory.beta_source to \"fixed\" or \"inverse_decay\"")
            })?;
            Ok(2.0 * d as f64 / (cfg.train.eta * sq))
        }
    }
}

/// Closed-form constants, envelope and PAC-Bayes report for the trained model,
/// plus the envelope check on the benchmark with a known minimum.
pub fn cmd_bounds(ctx: &Context, checkpoint: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let run = ctx.run_dir("bounds")?;
    let lambda = cfg.train.lambda;
    if let Err(e @ Error::NoConfinement) = log_sobolev_bound(lambda, cfg.theory.s, 1) {
        run.write_json(
            "bounds.json",
            &Failure {
                status: "failed",
                error: e.to_string(),
                lambda,
            },
        )?;
        return Err(CliError::runtime(format!("{e} (train.lambda = 0)")));
    }

    let source = checkpoint.map_or_else(|| ctx.train_dir(), Path::to_path_buf);
    match checkpoint_series(&source) {
        Ok(series) => toy_report(ctx, &run, &source, series.last().expect("non-empty").1.clone())?,
        Err(e) if checkpoint.is_some() => return Err(e),
        Err(_) => ctx.log(format!("no checkpoints under {}; skipping the model report", source.display())),
    }
    benchmark(ctx, &run)?;
    ctx.log(format!("wrote {}", run.path.display()));
    Ok(run.path.clone())
}

fn toy_report(ctx: &Context, run: &RunDir, source: &Path, ck: villani_core::model::Checkpoint) -> CliResult<()> {
    let cfg = &ctx.cfg;
    check_architecture(cfg, &ck)?;
    let lambda = ck.config.weight_decay;
    if lambda == 0.0 {
        return Err(CliError::runtime(format!("{} (checkpoint trained at λ = 0)", Error::NoConfinement)));
    }
    let trace: Vec<TraceRow> = read_rows(&run_dir_of(source).join(TRACE_FILE))?;
    let noise = mean_noise(&trace);
    let problem = toy_problem(cfg, ck.config.clone())?;
    let d = ck.theta.len();
    let risk = problem.data_oracle().value(&ck.theta)?;
    let f_hat = risk + 0.5 * lambda * ck.theta.iter().map(|x| x * x).sum::<f64>();
    let l_smooth = match cfg.theory.l_smooth {
        Some(l) => l,
        None => {
            let batch = leading_batch(&corpus(cfg)?, cfg.spectral.windows)?;
            let f = Regularized::new(TransformerLoss::new(Transformer::new(ck.config.clone())?, batch)?, lambda);
            let lcfg = LanczosConfig {
                max_iter: cfg.spectral.max_iter.min(d),
                tol: cfg.spectral.tol,
                ..LanczosConfig::new(1, cfg.spectral.seed)
            };
            1.1 * lanczos_topk(&f, &ck.theta, &lcfg)?.ritz_values[0]
        }
    };
    let mut inputs = TheoryInputs::with_decay(lambda, cfg.theory.s, d);
    inputs.beta = beta_for(cfg, lambda, d, noise)?;
    inputs.sigma_sq = noise.unwrap_or(1.0);
    inputs.l_smooth = l_smooth;
    inputs.eta = cfg.train.eta;
    inputs.epsilon = cfg.theory.epsilon;
    inputs.f0 = trace.first().map_or(f_hat, |r| r.f);
    inputs.f_star = cfg.theory.f_star.unwrap_or(0.0);
    inputs.delta = cfg.theory.delta;
    inputs.n = problem.data_oracle().predictions();
    let steps: Vec<u64> = trace.iter().map(|r| r.step).collect();
    let report = BoundReport::build(&inputs, f_hat, risk, &steps, noise)?;
    ctx.log(format!(
        "  model: C_LS = {:.3e}, η_max = {:.3e}, PAC-Bayes bound {}",
        report.c_ls,
        report.eta_max,
        report.pac_bayes.bound.map_or("invalid".into(), |b| format!("{b:.4}"))
    ));
    let mut v = serde_json::to_value(&report)?;
    v["status"] = "ok".into();
    v["beta_source"] = serde_json::to_value(cfg.theory.beta_source)?;
    v["checkpoint_step"] = ck.step.into();
    run.write_json("bounds.json", &v)?;
    Ok(())
}

fn benchmark(ctx: &Context, run: &RunDir) -> CliResult<()> {
    let b = &ctx.cfg.theory.benchmark;
    let data = SyntheticEnergy::QuadraticPlusBounded {
        lambda: 0.0,
        amplitude: b.amplitude,
        frequency: b.frequency,
        dim: b.dim,
    };
    let full = SyntheticEnergy::QuadraticPlusBounded {
        lambda: b.lambda,
        amplitude: b.amplitude,
        frequency: b.frequency,
        dim: b.dim,
    };
    let (f_star, _) = full
        .minimum()
        .ok_or_else(|| CliError::Usage("benchmark minimum is not known for these parameters".into()))?;
    let problem = NoisyGradient {
        oracle: data,
        sigma_sq: b.sigma_sq,
    };
    let theta0 = vec![b.start; b.dim];
    let tcfg = TrainConfig {
        eta: b.eta,
        lambda: b.lambda,
        steps: b.steps,
        batch_size: 1,
        noise: NoiseConfig::Langevin { beta: b.beta_train },
        schedule: Schedule::Constant,
        warmup_steps: 0,
        checkpoint_every: (b.steps / 10).max(1),
        log_every: b.log_every,
        sigma_every: 0,
        ..TrainConfig::default()
    };
    ctx.log(format!("  benchmark: {} seeds × {} steps in d = {}", b.seeds, b.steps, b.dim));
    let base = ctx.cfg.train.seed;
    let traces = (0..b.seeds)
        .into_par_iter()
        .map(|i| {
            train(
                &problem,
                &theta0,
                &TrainConfig {
                    seed: base + i,
                    ..tcfg.clone()
                },
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    let f = Regularized::new(data, b.lambda);
    let top = traces
        .iter()
        .flat_map(|t| &t.snapshots)
        .map(|s| Ok(lanczos_topk(&f, &s.theta, &LanczosConfig::new(1, 0))?.ritz_values[0]))
        .collect::<CliResult<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let l_smooth = 1.1 * top;
    let steps: Vec<u64> = traces[0].rows.iter().map(|r| r.step).collect();
    let mut inputs = TheoryInputs::with_decay(b.lambda, ctx.cfg.theory.s, b.dim);
    inputs.eta = b.eta;
    inputs.sigma_sq = b.sigma_sq;
    inputs.l_smooth = l_smooth;
    inputs.epsilon = ctx.cfg.theory.epsilon;
    inputs.f0 = traces[0].rows[0].f;
    inputs.f_star = f_star;
    inputs.delta = ctx.cfg.theory.delta;
    let envelope = suboptimality_envelope(&inputs, &steps)?;

    let mut worst = 0.0f64;
    let rows: Vec<EnvelopeRow> = envelope
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let gaps: Vec<f64> = traces.iter().map(|t| t.rows[i].f - f_star).collect();
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            worst = worst.max(mean / p.bound);
            EnvelopeRow {
                step: p.step,
                mean_suboptimality: mean,
                min_suboptimality: gaps.iter().copied().fold(f64::INFINITY, f64::min),
                max_suboptimality: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                envelope: p.bound,
            }
        })
        .collect();
    run.write_rows("envelope.csv", &rows)?;
    let last = traces[0].final_theta.clone();
    let f_hat = f.value(&last)?;
    let report = BoundReport::build(&inputs, f_hat, f_hat - 0.5 * b.lambda * norm_sq(&last), &steps, None)?;
    ctx.log(format!("  benchmark: max mean/envelope {worst:.4}"));
    run.write_json(
        "benchmark.json",
        &BenchmarkSummary {
            f_star,
            l_smooth,
            seeds: b.seeds,
            worst_ratio: worst,
            within_envelope: worst <= 1.0,
            report,
        },
    )?;
    ctx.write_svg(run, "envelope.svg", |hash| {
        let pts = |f: &dyn Fn(&EnvelopeRow) -> f64| rows.iter().map(|r| (r.step as f64, f(r))).collect();
        Chart::new(
            format!("Suboptimality of noisy SGD against the envelope ({} seeds)", b.seeds),
            "step",
            "F(θ_k) − F*",
        )
        .scales(Scale::Linear, Scale::Log)
        .series(Series::line("mean over seeds", pts(&|r| r.mean_suboptimality)))
        .series(Series::line("max over seeds", pts(&|r| r.max_suboptimality)).dashed())
        .series(Series::line("envelope", pts(&|r| r.envelope)))
        .to_svg(hash)
    })?;
    Ok(())
}

fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

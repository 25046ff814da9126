use std::path::PathBuf;

use serde::Serialize;
use villani_core::model::Checkpoint;
use villani_core::trainer::{evaluate_heldout, lambda_sweep, train, TrainTrace, EVAL_BATCH, LAMBDA_GRID};

use super::{init_theta, toy_problem, Context, CHECKPOINT_DIR, TRACE_FILE};
use crate::error::CliResult;
use crate::output::RunDir;
use crate::plot::{Chart, Scale, Series};

#[derive(Serialize)]
struct HeldoutRow {
    step: u64,
    nll: f64,
    perplexity: f64,
    error_rate: f64,
}

#[derive(Serialize)]
struct CheckpointEntry {
    step: u64,
    file: String,
}

#[derive(Serialize)]
struct Manifest {
    lambda: f64,
    train_seed: u64,
    corpus_seed: u64,
    d: usize,
    steps: u64,
    final_f: f64,
    final_l: f64,
    final_theta_norm_sq: f64,
    heldout_nll: f64,
    heldout_perplexity: f64,
    mean_sigma_sq: Option<f64>,
    comparable: bool,
    wall_time_s: f64,
    checkpoints: Vec<CheckpointEntry>,
    environment: Environment,
}

#[derive(Serialize)]
struct Environment {
    os: &'static str,
    arch: &'static str,
    threads: usize,
    version: &'static str,
}

fn environment() -> Environment {
    Environment {
        os: std::env::consts::OS,
        arch: std::env::consts::ARCH,
        threads: rayon::current_num_threads(),
        version: env!("CARGO_PKG_VERSION"),
    }
}

/// Trains at `train.lambda`, or at every λ of the grid with `sweep`, writing
/// the trace, checkpoints, held-out metrics and manifest.
pub fn cmd_train(ctx: &Context, sweep: bool) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let run = ctx.run_dir("train")?;
    let problem = toy_problem(cfg, cfg.model.model_config(cfg.train.lambda))?;
    let theta0 = init_theta(&problem.model, cfg.train.seed);
    ctx.log(format!(
        "training d = {} for {} steps (λ = {})",
        theta0.len(),
        cfg.train.steps,
        if sweep { format!("{LAMBDA_GRID:?}") } else { cfg.train.lambda.to_string() }
    ));
    let runs = if sweep {
        lambda_sweep(&problem, &theta0, &cfg.train, &LAMBDA_GRID)?
    } else {
        vec![(cfg.train.lambda, train(&problem, &theta0, &cfg.train)?)]
    };
    let heldout = problem.corpus.heldout_batches(EVAL_BATCH)?;
    for (lambda, trace) in &runs {
        let sub = if sweep { format!("lambda_{lambda:e}") } else { String::new() };
        let dir = run.path.join(&sub);
        std::fs::create_dir_all(dir.join(CHECKPOINT_DIR))?;
        let prefix = |name: &str| if sub.is_empty() { name.to_string() } else { format!("{sub}/{name}") };
        write_run(ctx, &run, &prefix, *lambda, trace, &problem, &heldout)?;
    }
    ctx.log(format!("wrote {}", run.path.display()));
    Ok(run.path.clone())
}

fn write_run(
    ctx: &Context,
    run: &RunDir,
    prefix: &dyn Fn(&str) -> String,
    lambda: f64,
    trace: &TrainTrace,
    problem: &villani_core::trainer::CorpusProblem,
    heldout: &[villani_core::model::Batch],
) -> CliResult<()> {
    let cfg = &ctx.cfg;
    run.write_rows(&prefix(TRACE_FILE), &trace.rows)?;
    let model_cfg = cfg.model.model_config(lambda);
    let mut entries = vec![];
    let mut held_rows = vec![];
    for snap in &trace.snapshots {
        let mut ck = Checkpoint::new(model_cfg.clone(), cfg.train.seed, snap.step, snap.theta.clone());
        ck.extra.insert("config_hash".into(), run.hash.clone());
        let name = format!("{CHECKPOINT_DIR}/step_{:06}.ckpt", snap.step);
        ck.write(&run.file(&prefix(&name)))?;
        entries.push(CheckpointEntry {
            step: snap.step,
            file: name,
        });
        let m = evaluate_heldout(&problem.model, &snap.theta, heldout)?;
        held_rows.push(HeldoutRow {
            step: snap.step,
            nll: m.nll,
            perplexity: m.perplexity,
            error_rate: m.error_rate,
        });
    }
    run.write_rows(&prefix("heldout.csv"), &held_rows)?;
    let last = trace.rows.last().expect("trace has the initial row");
    let held = held_rows.last().expect("initial checkpoint");
    let manifest = Manifest {
        lambda,
        train_seed: cfg.train.seed,
        corpus_seed: cfg.model.corpus_seed,
        d: trace.final_theta.len(),
        steps: cfg.train.steps,
        final_f: last.f,
        final_l: last.l,
        final_theta_norm_sq: last.theta_norm_sq,
        heldout_nll: held.nll,
        heldout_perplexity: held.perplexity,
        mean_sigma_sq: trace.mean_sigma_sq(),
        comparable: trace.comparable,
        wall_time_s: last.wall_time_s,
        checkpoints: entries,
        environment: environment(),
    };
    run.write_json(&prefix("manifest.json"), &manifest)?;
    ctx.write_svg(run, &prefix("trace.svg"), |hash| {
        let pts = |f: &dyn Fn(&villani_core::trainer::TraceRow) -> f64| -> Vec<(f64, f64)> {
            trace.rows.iter().map(|r| (r.step as f64, f(r))).collect()
        };
        Chart::new(format!("Training trace, λ = {lambda:e}"), "step", "loss")
            .scales(Scale::Linear, Scale::Log)
            .series(Series::line("F = L + (λ/2)‖θ‖²", pts(&|r| r.f)))
            .series(Series::line("L (train subsample)", pts(&|r| r.l)).dashed())
            .series(Series::markers(
                "held-out NLL",
                held_rows.iter().map(|h| (h.step as f64, h.nll)).collect(),
            ))
            .to_svg(hash)
    })?;
    Ok(())
}

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use villani_core::diagnostics::psi_estimate;
use villani_core::model::{Transformer, TransformerLoss};
use villani_core::theory::{pac_bayes_bound, TheoryInputs};
use villani_core::trainer::{evaluate_heldout, EVAL_BATCH};
use villani_core::{EnergyOracle, Error, Regularized};

use super::bounds::{beta_for, mean_noise};
use super::{check_architecture, checkpoint_series, corpus, leading_batch, pearson, run_dir_of, toy_problem, Context, TRACE_FILE};
use crate::config::BetaSource;
use crate::error::{CliError, CliResult};
use crate::output::read_rows;
use crate::plot::{Chart, Scale, Series};

#[derive(Serialize)]
struct PacRow {
    checkpoint_id: usize,
    step: u64,
    theta_norm_sq: f64,
    empirical_risk: f64,
    f_hat: f64,
    heldout_risk: f64,
    perplexity: f64,
    psi_est: f64,
    psi_std_err: f64,
    bound: Option<f64>,
    valid: bool,
}

#[derive(Serialize)]
struct PacSummary {
    lambda: f64,
    beta: f64,
    beta_source: BetaSource,
    n: usize,
    delta: f64,
    d: usize,
    checkpoints: usize,
    valid: usize,
    /// Fraction of all checkpoints whose bound is at least the held-out risk.
    coverage: f64,
    /// Pearson correlation of Ψ with −perplexity, and its square.
    pearson_r_psi_neg_perplexity: Option<f64>,
    pearson_r2_psi_neg_perplexity: Option<f64>,
}

/// PAC-Bayes bound, held-out risk and Ψ at every checkpoint.
pub fn cmd_pacbayes(ctx: &Context, checkpoint: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let source = checkpoint.map_or_else(|| ctx.train_dir(), Path::to_path_buf);
    let series = checkpoint_series(&source)?;
    let first = &series[0].1;
    check_architecture(cfg, first)?;
    let lambda = first.config.weight_decay;
    if lambda == 0.0 {
        return Err(CliError::runtime(format!("{} (checkpoints trained at λ = 0)", Error::NoConfinement)));
    }
    let d = first.theta.len();
    let noise = match cfg.theory.beta_source {
        BetaSource::Noise => mean_noise(&read_rows::<villani_core::trainer::TraceRow>(&run_dir_of(&source).join(TRACE_FILE))?),
        _ => None,
    };
    let beta = beta_for(cfg, lambda, d, noise)?;
    let problem = toy_problem(cfg, first.config.clone())?;
    let heldout = problem.corpus.heldout_batches(EVAL_BATCH)?;
    let diag_batch = leading_batch(&corpus(cfg)?, cfg.diagnostics.checkpoint_windows)?;
    let psi_oracle = Regularized::new(TransformerLoss::new(Transformer::new(first.config.clone())?, diag_batch)?, lambda);
    let mut inputs = TheoryInputs::with_decay(lambda, cfg.theory.s, d);
    inputs.beta = beta;
    inputs.n = problem.data_oracle().predictions();
    inputs.delta = cfg.theory.delta;
    let probes = cfg.diagnostics.probe_config();
    let run = ctx.run_dir("pacbayes")?;
    ctx.log(format!("pacbayes: {} checkpoints, β = {beta:.4e}, n = {}", series.len(), inputs.n));

    let rows = series
        .par_iter()
        .enumerate()
        .map(|(i, (_, ck))| {
            check_architecture(cfg, ck)?;
            let risk = problem.data_oracle().value(&ck.theta)?;
            let norm_sq: f64 = ck.theta.iter().map(|x| x * x).sum();
            let f_hat = risk + 0.5 * lambda * norm_sq;
            let held = evaluate_heldout(&problem.model, &ck.theta, &heldout)?;
            let psi = psi_estimate(&psi_oracle, &ck.theta, cfg.diagnostics.s, &probes)?;
            let pb = pac_bayes_bound(f_hat, risk, &inputs)?;
            Ok(PacRow {
                checkpoint_id: i,
                step: ck.step,
                theta_norm_sq: norm_sq,
                empirical_risk: risk,
                f_hat,
                heldout_risk: held.nll,
                perplexity: held.perplexity,
                psi_est: psi.psi_est,
                psi_std_err: psi.psi_std_err(),
                bound: pb.bound,
                valid: pb.valid,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    run.write_rows("pacbayes.csv", &rows)?;

    let covered = rows.iter().filter(|r| r.bound.is_some_and(|b| b >= r.heldout_risk)).count();
    let psi: Vec<f64> = rows.iter().map(|r| r.psi_est).collect();
    let neg_ppl: Vec<f64> = rows.iter().map(|r| -r.perplexity).collect();
    let r = pearson(&psi, &neg_ppl);
    let summary = PacSummary {
        lambda,
        beta,
        beta_source: cfg.theory.beta_source,
        n: inputs.n,
        delta: inputs.delta,
        d,
        checkpoints: rows.len(),
        valid: rows.iter().filter(|r| r.valid).count(),
        coverage: covered as f64 / rows.len() as f64,
        pearson_r_psi_neg_perplexity: r,
        pearson_r2_psi_neg_perplexity: r.map(|r| r * r),
    };
    ctx.log(format!(
        "  coverage {:.3}, R²(Ψ, −perplexity) {}",
        summary.coverage,
        summary.pearson_r2_psi_neg_perplexity.map_or("n/a".into(), |v| format!("{v:.3}"))
    ));
    run.write_json("pacbayes.json", &summary)?;

    ctx.write_svg(&run, "pacbayes.svg", |hash| {
        let pts = rows.iter().filter_map(|r| r.bound.map(|b| (r.heldout_risk, b))).collect();
        let mut chart = Chart::new(
            format!("PAC-Bayes bound against held-out risk, λ = {lambda:e}"),
            "held-out risk (NLL)",
            "bound",
        )
        .series(Series::markers("checkpoints", pts));
        chart.diagonal = true;
        chart.to_svg(hash)
    })?;
    ctx.write_svg(&run, "psi_perplexity.svg", |hash| {
        let title = match summary.pearson_r2_psi_neg_perplexity {
            Some(v) => format!("Ψ_s against held-out perplexity, R² = {v:.3}"),
            None => "Ψ_s against held-out perplexity".into(),
        };
        Chart::new(title, "perplexity", "Ψ_s")
            .scales(Scale::Linear, Scale::Linear)
            .series(Series::markers("checkpoints", rows.iter().map(|r| (r.perplexity, r.psi_est)).collect()))
            .to_svg(hash)
    })?;
    ctx.log(format!("wrote {}", run.path.display()));
    Ok(run.path.clone())
}

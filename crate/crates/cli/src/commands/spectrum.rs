use std::path::{Path, PathBuf};

use serde::Serialize;
use villani_core::diagnostics::LinearFit;
use villani_core::model::{Transformer, TransformerLoss};
use villani_core::spectral::{lanczos_topk, spectral_sweep, LanczosConfig, SweepPoint, SweepRow, MEDIAN_SCOPE};
use villani_core::Regularized;

use super::{check_architecture, checkpoint_series, corpus, leading_batch, Context};
use crate::error::CliResult;
use crate::plot::{Chart, Scale, Series};

#[derive(Serialize)]
struct SpectrumRow {
    checkpoint_id: usize,
    step: u64,
    theta_norm: f64,
    spectral_radius: f64,
    top: f64,
    median: f64,
    max_median_ratio: f64,
    converged: usize,
    iterations: usize,
    breakdown: bool,
}

#[derive(Serialize)]
struct SpectrumSummary {
    k: usize,
    lambda: f64,
    median_scope: &'static str,
    /// Spectral radius against ‖θ‖; absent with a single checkpoint.
    fit: Option<LinearFit>,
    rows: Vec<SpectrumRow>,
}

/// Top-k Hessian spectrum of the regularized objective at every checkpoint.
pub fn cmd_spectrum(ctx: &Context, checkpoint: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let source = checkpoint.map_or_else(|| ctx.train_dir(), Path::to_path_buf);
    let series = checkpoint_series(&source)?;
    let batch = leading_batch(&corpus(cfg)?, cfg.spectral.windows)?;
    let first = &series[0].1;
    check_architecture(cfg, first)?;
    let model = Transformer::new(first.config.clone())?;
    let lambda = first.config.weight_decay;
    let data = TransformerLoss::new(model, batch)?;
    let d = first.theta.len();
    let lcfg = LanczosConfig {
        k: cfg.spectral.k,
        max_iter: cfg.spectral.max_iter.min(d),
        tol: cfg.spectral.tol,
        seed: cfg.spectral.seed,
    };
    let run = ctx.run_dir("spectrum")?;
    ctx.log(format!(
        "spectrum: {} checkpoints, top {} of d = {d}, λ = {lambda:e}",
        series.len(),
        lcfg.k
    ));
    let points: Vec<SweepPoint<Regularized<TransformerLoss>>> = series
        .iter()
        .enumerate()
        .map(|(i, (_, ck))| {
            check_architecture(cfg, ck)?;
            Ok(SweepPoint {
                checkpoint_id: i,
                step: ck.step,
                oracle: Regularized::new(data.clone(), ck.config.weight_decay),
                theta: ck.theta.clone(),
            })
        })
        .collect::<CliResult<_>>()?;

    let (rows, fit): (Vec<SweepRow>, Option<LinearFit>) = if points.len() >= 2 {
        let sweep = spectral_sweep(&points, &lcfg)?;
        run.write_csv("spectrum.csv", |w| Ok(sweep.write_csv(w)?))?;
        (sweep.rows, Some(sweep.fit))
    } else {
        let p = &points[0];
        let row = SweepRow {
            checkpoint_id: p.checkpoint_id,
            step: p.step,
            summary: lanczos_topk(&p.oracle, &p.theta, &lcfg)?,
        };
        let sweep = villani_core::spectral::SpectralSweep {
            rows: vec![row.clone()],
            fit: LinearFit {
                slope: f64::NAN,
                intercept: f64::NAN,
                slope_std_err: f64::INFINITY,
                n: 1,
            },
            k: lcfg.k,
        };
        run.write_csv("spectrum.csv", |w| Ok(sweep.write_csv(w)?))?;
        (vec![row], None)
    };

    let out_rows: Vec<SpectrumRow> = rows
        .iter()
        .map(|r| {
            let s = &r.summary;
            let top = s.ritz_values.first().copied().unwrap_or(f64::NAN);
            SpectrumRow {
                checkpoint_id: r.checkpoint_id,
                step: r.step,
                theta_norm: s.theta_norm_sq.sqrt(),
                spectral_radius: s.spectral_radius,
                top,
                median: top / s.max_median_ratio,
                max_median_ratio: s.max_median_ratio,
                converged: s.converged,
                iterations: s.iterations,
                breakdown: s.breakdown,
            }
        })
        .collect();
    ctx.write_svg(&run, "spectrum.svg", |hash| {
        let pts = |f: &dyn Fn(&SpectrumRow) -> f64| out_rows.iter().map(|r| (r.step as f64, f(r))).collect();
        let positive = out_rows.iter().all(|r| r.top > 0.0 && r.median > 0.0);
        let scale = out_rows.iter().map(|r| r.spectral_radius).fold(0.0, f64::max) * 1e-4;
        Chart::new(
            format!("Top-{} Hessian spectrum, λ = {lambda:e}", lcfg.k),
            "step",
            "Ritz value",
        )
        .scales(Scale::Linear, if positive { Scale::Log } else { Scale::SymLog(scale.max(1e-12)) })
        .series(Series::line("largest", pts(&|r| r.top)).with_markers())
        .series(Series::line(format!("median of top {}", lcfg.k), pts(&|r| r.median)).with_markers())
        .to_svg(hash)
    })?;
    run.write_json(
        "spectrum.json",
        &SpectrumSummary {
            k: lcfg.k,
            lambda,
            median_scope: MEDIAN_SCOPE,
            fit,
            rows: out_rows,
        },
    )?;
    ctx.log(format!("wrote {}", run.path.display()));
    Ok(run.path.clone())
}

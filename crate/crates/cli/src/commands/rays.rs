use std::path::{Path, PathBuf};

use serde::Serialize;
use villani_core::diagnostics::{radial_ray_probe, random_unit_directions, LinearFit, RayCsvRow, RayTable};
use villani_core::landscape::SyntheticEnergy;
use villani_core::model::{appendix_constants, ParamVector, Transformer, TransformerLoss};
use villani_core::{EnergyOracle, Regularized};

use super::{checkpoint_series, corpus, geometric_grid, init_theta, leading_batch, check_architecture, Context};
use crate::config::{ExperimentConfig, Landscape};
use crate::error::{CliError, CliResult};
use crate::plot::{Chart, Scale, Series};

/// Ray CSV row with the weight decay it was probed at.
#[derive(Serialize)]
struct RayOut {
    lambda: f64,
    direction_id: usize,
    radius: f64,
    theta_norm_sq: f64,
    trace_est: f64,
    trace_std_err: f64,
    grad_norm_sq: f64,
    psi_est: f64,
    s: f64,
    #[serde(rename = "M")]
    m: usize,
    seed: u64,
}

impl RayOut {
    fn new(lambda: f64, r: RayCsvRow) -> Self {
        RayOut {
            lambda,
            direction_id: r.direction_id,
            radius: r.radius,
            theta_norm_sq: r.theta_norm_sq,
            trace_est: r.trace_est,
            trace_std_err: r.trace_std_err,
            grad_norm_sq: r.grad_norm_sq,
            psi_est: r.psi_est,
            s: r.s,
            m: r.m,
            seed: r.seed,
        }
    }
}

#[derive(Serialize)]
struct LambdaSummary {
    lambda: f64,
    /// `λ²/s`, the large-radius slope of Ψ against ‖θ‖².
    target_slope: f64,
    threshold_radius: Option<f64>,
    pooled: Option<LinearFit>,
    pooled_ci95: Option<(f64, f64)>,
    slope_ratio: Option<f64>,
    zero_slope_indistinguishable: Option<bool>,
    per_direction: Vec<Option<LinearFit>>,
}

#[derive(Serialize)]
struct RaysSummary {
    landscape: Landscape,
    d: usize,
    s: f64,
    probes: usize,
    c1: f64,
    radii: Vec<f64>,
    lambdas: Vec<LambdaSummary>,
    /// Pooled slope strictly increases with λ.
    monotone_in_lambda: bool,
}

struct RaySource {
    base: Box<dyn Fn(f64) -> Box<dyn EnergyOracle>>,
    theta0: Vec<f64>,
    c1: f64,
}

fn source(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> CliResult<RaySource> {
    let dim = cfg.diagnostics.synthetic_dim;
    Ok(match cfg.diagnostics.landscape {
        Landscape::Toy => {
            let (model_cfg, theta0) = match checkpoint {
                Some(p) => {
                    let (_, ck) = checkpoint_series(p)?.pop().expect("non-empty series");
                    check_architecture(cfg, &ck)?;
                    (ck.config, ck.theta)
                }
                None => {
                    let mc = cfg.model.model_config(0.0);
                    let theta = init_theta(&Transformer::new(mc.clone())?, cfg.train.seed);
                    (mc, theta)
                }
            };
            let model = Transformer::new(model_cfg.clone())?;
            let w_star = ParamVector::from_vec(model.layout().clone(), theta0.clone())?.max_operator_norm();
            let c1 = appendix_constants(&model_cfg, w_star, model_cfg.embed_bound)?.c1;
            let batch = leading_batch(&corpus(cfg)?, cfg.diagnostics.ray_windows)?;
            let data = TransformerLoss::new(model, batch)?;
            RaySource {
                base: Box::new(move |l| Box::new(Regularized::new(data.clone(), l))),
                theta0,
                c1,
            }
        }
        Landscape::PureQuadratic => RaySource {
            base: Box::new(move |l| Box::new(SyntheticEnergy::pure_quadratic(l, dim))),
            theta0: vec![0.0; dim],
            c1: 0.0,
        },
        Landscape::QuadraticPlusBounded => RaySource {
            base: Box::new(move |l| Box::new(SyntheticEnergy::quadratic_plus_bounded(l, dim))),
            theta0: vec![0.0; dim],
            c1: SyntheticEnergy::quadratic_plus_bounded(0.0, dim).data_gradient_bound(),
        },
    })
}

/// Ψ along random rays for each λ of `diagnostics.lambdas`.
pub fn cmd_rays(ctx: &Context, checkpoint: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let diag = &cfg.diagnostics;
    let src = source(cfg, checkpoint)?;
    let d = src.theta0.len();
    let smallest = diag.lambdas.iter().copied().filter(|&l| l > 0.0).fold(f64::INFINITY, f64::min);
    let start = diag.radius_start.unwrap_or(if src.c1 > 0.0 && smallest.is_finite() {
        2.0 * src.c1 / smallest
    } else {
        1.0
    });
    if diag.radii < 2 {
        return Err(CliError::Usage("diagnostics.radii must be at least 2".into()));
    }
    let radii = geometric_grid(start, diag.radius_factor, diag.radii);
    let directions = random_unit_directions(d, diag.directions, diag.direction_seed);
    let probes = diag.probe_config();
    let run = ctx.run_dir("rays")?;
    ctx.log(format!(
        "rays: d = {d}, {} directions × {} radii from {start:.3e}, λ ∈ {:?}",
        diag.directions, diag.radii, diag.lambdas
    ));

    let mut tables: Vec<(f64, RayTable)> = vec![];
    for &lambda in &diag.lambdas {
        let oracle = (src.base)(lambda);
        let t = radial_ray_probe(oracle.as_ref(), &src.theta0, &directions, &radii, diag.s, &probes)?;
        ctx.log(format!(
            "  λ = {lambda:e}: pooled slope {}",
            t.pooled.map_or("n/a".into(), |f| format!("{:.4e} ± {:.1e}", f.slope, f.slope_std_err))
        ));
        tables.push((lambda, t));
    }

    let rows: Vec<RayOut> = tables
        .iter()
        .flat_map(|(l, t)| t.rows.iter().map(move |r| RayOut::new(*l, r.into())))
        .collect();
    run.write_rows("rays.csv", &rows)?;

    let mut sorted: Vec<(f64, Option<f64>)> = tables.iter().map(|(l, t)| (*l, t.pooled.map(|f| f.slope))).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone = sorted
        .windows(2)
        .all(|w| matches!((w[0].1, w[1].1), (Some(a), Some(b)) if b > a || w[0].0 == w[1].0));
    let summary = RaysSummary {
        landscape: diag.landscape,
        d,
        s: diag.s,
        probes: diag.probes,
        c1: src.c1,
        radii: radii.clone(),
        lambdas: tables
            .iter()
            .map(|(l, t)| {
                let target = l * l / diag.s;
                LambdaSummary {
                    lambda: *l,
                    target_slope: target,
                    threshold_radius: (*l > 0.0 && src.c1 > 0.0).then(|| 2.0 * src.c1 / l),
                    pooled: t.pooled,
                    pooled_ci95: t.pooled.map(|f| f.slope_ci95()),
                    slope_ratio: t.pooled.filter(|_| target > 0.0).map(|f| f.slope / target),
                    zero_slope_indistinguishable: t
                        .pooled
                        .filter(|_| *l == 0.0)
                        .map(|f| f.indistinguishable_from_zero(2.0)),
                    per_direction: t.fits.clone(),
                }
            })
            .collect(),
        monotone_in_lambda: monotone,
    };
    run.write_json("rays.json", &summary)?;

    ctx.write_svg(&run, "rays.svg", |hash| {
        let mut chart = Chart::new(
            format!("Ψ_s along {} random rays (s = {})", diag.directions, diag.s),
            "‖θ‖²",
            "mean Ψ_s over directions",
        );
        let psi_max = rows.iter().map(|r| r.psi_est.abs()).filter(|v| v.is_finite()).fold(0.0, f64::max);
        chart = chart.scales(Scale::Log, Scale::SymLog((psi_max * 1e-6).max(1e-12)));
        for (l, t) in &tables {
            let pts: Vec<(f64, f64)> = radii
                .iter()
                .map(|&r| {
                    let at: Vec<_> = t.rows.iter().filter(|x| x.radius == r).collect();
                    let n = at.len() as f64;
                    (
                        at.iter().map(|x| x.record.theta_norm_sq).sum::<f64>() / n,
                        at.iter().map(|x| x.record.psi_est).sum::<f64>() / n,
                    )
                })
                .collect();
            chart = chart.series(Series::line(format!("λ = {l:e}"), pts).with_markers());
        }
        chart.to_svg(hash)
    })?;
    ctx.log(format!("wrote {}", run.path.display()));
    Ok(run.path.clone())
}

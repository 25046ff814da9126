use std::path::{Path, PathBuf};

use serde::Serialize;
use villani_core::landscape::SyntheticEnergy;
use villani_core::model::{Transformer, TransformerLoss};
use villani_core::{EnergyOracle, Regularized};

use super::{check_architecture, checkpoint_series, corpus, leading_batch, Context};
use crate::config::Landscape;
use crate::error::CliResult;
use crate::plot::Contour;
use crate::subspace::{evaluate_surface, fit_quadratic, plane, QuadraticFit, SurfaceGrid};

#[derive(Serialize)]
struct SurfaceRow {
    a: f64,
    b: f64,
    lambda: f64,
    #[serde(rename = "F")]
    f: f64,
}

#[derive(Serialize)]
struct SliceSummary {
    lambda: f64,
    fit: QuadraticFit,
    min_value: f64,
    max_value: f64,
}

#[derive(Serialize)]
struct SubspaceSummary {
    landscape: Landscape,
    step: Option<u64>,
    d: usize,
    grid: usize,
    extent: f64,
    seed: u64,
    theta_norm: f64,
    slices: Vec<SliceSummary>,
}

/// Energy on a random plane through the final checkpoint, with and without
/// the quadratic penalty.
pub fn cmd_subspace(ctx: &Context, checkpoint: Option<&Path>) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let diag = &cfg.diagnostics;
    let dim = diag.synthetic_dim;
    let (theta, step, lambda, make): (Vec<f64>, Option<u64>, f64, Box<dyn Fn(f64) -> Box<dyn EnergyOracle>>) =
        match diag.landscape {
            Landscape::Toy => {
                let source = checkpoint.map_or_else(|| ctx.train_dir(), Path::to_path_buf);
                let (_, ck) = checkpoint_series(&source)?.pop().expect("non-empty series");
                check_architecture(cfg, &ck)?;
                let batch = leading_batch(&corpus(cfg)?, diag.checkpoint_windows)?;
                let data = TransformerLoss::new(Transformer::new(ck.config.clone())?, batch)?;
                (
                    ck.theta,
                    Some(ck.step),
                    ck.config.weight_decay,
                    Box::new(move |l| Box::new(Regularized::new(data.clone(), l))),
                )
            }
            Landscape::PureQuadratic => (
                vec![0.0; dim],
                None,
                cfg.train.lambda,
                Box::new(move |l| Box::new(SyntheticEnergy::pure_quadratic(l, dim))),
            ),
            Landscape::QuadraticPlusBounded => (
                vec![0.0; dim],
                None,
                cfg.train.lambda,
                Box::new(move |l| Box::new(SyntheticEnergy::quadratic_plus_bounded(l, dim))),
            ),
        };
    let lambdas: Vec<f64> = if lambda == 0.0 { vec![0.0] } else { vec![0.0, lambda] };
    let (u, v) = plane(theta.len(), diag.subspace_seed)?;
    let run = ctx.run_dir("subspace")?;
    ctx.log(format!(
        "subspace: {}×{} grid over ±{} at λ ∈ {lambdas:?}",
        diag.subspace_grid, diag.subspace_grid, diag.subspace_extent
    ));

    let mut surfaces: Vec<(f64, SurfaceGrid, QuadraticFit)> = vec![];
    for &l in &lambdas {
        let oracle = make(l);
        let s = evaluate_surface(oracle.as_ref(), &theta, (&u, &v), diag.subspace_grid, diag.subspace_extent)?;
        let fit = fit_quadratic(&s)?;
        ctx.log(format!(
            "  λ = {l:e}: anisotropy {}",
            fit.anisotropy.map_or("∞ (not elliptic)".into(), |a| format!("{a:.3}"))
        ));
        surfaces.push((l, s, fit));
    }

    let rows: Vec<SurfaceRow> = surfaces
        .iter()
        .flat_map(|(l, s, _)| {
            s.values.iter().enumerate().flat_map(move |(j, row)| {
                row.iter().enumerate().map(move |(i, &f)| SurfaceRow {
                    a: s.a[i],
                    b: s.b[j],
                    lambda: *l,
                    f,
                })
            })
        })
        .collect();
    run.write_rows("subspace.csv", &rows)?;

    for (idx, (l, s, fit)) in surfaces.iter().enumerate() {
        let name = if idx + 1 == surfaces.len() {
            "subspace.svg".to_string()
        } else {
            format!("subspace_lambda_{l:e}.svg")
        };
        ctx.write_svg(&run, &name, |hash| {
            let aniso = fit.anisotropy.map_or("∞".into(), |a| format!("{a:.2}"));
            Contour {
                title: format!("F on a random plane, λ = {l:e}, anisotropy {aniso}"),
                x_label: "a (along u)".into(),
                y_label: "b (along v)".into(),
                xs: s.a.clone(),
                ys: s.b.clone(),
                z: s.values.clone(),
                levels: Contour::auto_levels(&s.values, 12),
                marker: Some((0.0, 0.0)),
            }
            .to_svg(hash)
        })?;
    }

    let summary = SubspaceSummary {
        landscape: diag.landscape,
        step,
        d: theta.len(),
        grid: diag.subspace_grid,
        extent: diag.subspace_extent,
        seed: diag.subspace_seed,
        theta_norm: theta.iter().map(|x| x * x).sum::<f64>().sqrt(),
        slices: surfaces
            .into_iter()
            .map(|(lambda, s, fit)| {
                let flat = s.values.iter().flatten().copied();
                SliceSummary {
                    lambda,
                    fit,
                    min_value: flat.clone().fold(f64::INFINITY, f64::min),
                    max_value: flat.fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect(),
    };
    run.write_json("subspace.json", &summary)?;
    ctx.log(format!("wrote {}", run.path.display()));
    Ok(run.path.clone())
}

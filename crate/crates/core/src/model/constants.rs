use serde::Serialize;

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// Data-term bounds `‖∇L‖ ≤ C₁`, `|ΔL| ≤ C₂` and the radius beyond which the
/// quadratic penalty dominates the diagnostic field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AppendixConstants {
    pub c1: f64,
    pub c2: f64,
    /// `2·C₁/λ`; infinite when λ = 0.
    pub threshold_radius: f64,
}

/// `C₁ = 2·B·W*·(1 + L·W*·√d_model)` and
/// `C₂ = 2·V·B²·W*² + L·d_model²·W*²`, with `W*` the largest weight-matrix
/// operator norm seen during training.
pub fn appendix_constants(cfg: &ModelConfig, w_max: f64, embed_bound: f64) -> Result<AppendixConstants> {
    if !(w_max >= 0.0 && w_max.is_finite()) {
        return Err(Error::invalid("W*_max must be nonnegative and finite"));
    }
    if !(embed_bound > 0.0) {
        return Err(Error::invalid("embedding bound B must be positive"));
    }
    let layers = cfg.layers as f64;
    let width = cfg.d_model as f64;
    let c1 = 2.0 * embed_bound * w_max * (1.0 + layers * w_max * width.sqrt());
    let c2 = 2.0 * cfg.vocab as f64 * embed_bound.powi(2) * w_max.powi(2) + layers * width.powi(2) * w_max.powi(2);
    let threshold_radius = if cfg.weight_decay > 0.0 {
        2.0 * c1 / cfg.weight_decay
    } else {
        f64::INFINITY
    };
    Ok(AppendixConstants {
        c1,
        c2,
        threshold_radius,
    })
}

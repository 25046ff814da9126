use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, Transformer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeldoutMetrics {
    /// Mean next-token cross-entropy.
    pub nll: f64,
    pub perplexity: f64,
    /// Fraction of targets that are not the argmax prediction.
    pub error_rate: f64,
    pub predictions: usize,
}

pub fn evaluate_heldout(model: &Transformer, theta: &[f64], batches: &[Batch]) -> Result<HeldoutMetrics> {
    let (mut nll, mut errors, mut n) = (0.0, 0, 0);
    for b in batches {
        let (s, e) = model.evaluate(theta, b)?;
        nll += s;
        errors += e;
        n += b.predictions();
    }
    if n == 0 {
        return Err(Error::invalid("held-out stream is empty"));
    }
    let mean = nll / n as f64;
    Ok(HeldoutMetrics {
        nll: mean,
        perplexity: mean.exp(),
        error_rate: errors as f64 / n as f64,
        predictions: n,
    })
}

/// `exp(mean cross-entropy)` over the held-out batches.
pub fn evaluate_perplexity(model: &Transformer, theta: &[f64], batches: &[Batch]) -> Result<f64> {
    Ok(evaluate_heldout(model, theta, batches)?.perplexity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn uniform_model_has_vocab_perplexity() {
        let model = Transformer::new(ModelConfig::tiny(1, 4, 2, 64, 4)).unwrap();
        let theta = vec![0.0; model.dim()];
        let b = Batch::from_windows(&[vec![1, 2, 3, 4, 5], vec![60, 61, 62, 63, 0]]).unwrap();
        let p = evaluate_perplexity(&model, &theta, &[b]).unwrap();
        assert!((p - 64.0).abs() < 1e-10);
    }

    #[test]
    fn empty_stream_rejected() {
        let model = Transformer::new(ModelConfig::tiny(1, 4, 2, 8, 4)).unwrap();
        assert!(evaluate_perplexity(&model, &vec![0.0; model.dim()], &[]).is_err());
    }
}

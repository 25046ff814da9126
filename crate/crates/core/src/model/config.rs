use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the decoder-only transformer plus the weight-decay factor of
/// the regularized objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub context: usize,
    /// Norm bound B on embedding rows.
    pub embed_bound: f64,
    /// Weight-decay factor λ.
    pub weight_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            layers: 2,
            d_model: 32,
            heads: 2,
            d_ff: 128,
            vocab: 64,
            context: 16,
            embed_bound: 1.0,
            weight_decay: 1e-3,
        }
    }
}

impl ModelConfig {
    /// Small configuration with `d_ff = 4·d_model`.
    pub fn tiny(layers: usize, d_model: usize, heads: usize, vocab: usize, context: usize) -> Self {
        ModelConfig {
            layers,
            d_model,
            heads,
            d_ff: 4 * d_model,
            vocab,
            context,
            ..Default::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("context", self.context),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model.{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "model.d_model ({}) must be divisible by model.heads ({})",
                self.d_model, self.heads
            )));
        }
        if !(self.embed_bound > 0.0 && self.embed_bound.is_finite()) {
            return Err(Error::invalid("model.embed_bound must be positive and finite"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("model.weight_decay must be nonnegative and finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_with_standard_ff_width() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.d_ff, 4 * c.d_model);
    }

    #[test]
    fn heads_must_divide_width() {
        let c = ModelConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn bound_must_be_positive() {
        let c = ModelConfig {
            embed_bound: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}

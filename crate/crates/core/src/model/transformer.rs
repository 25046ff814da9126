use std::sync::Arc;

use super::config::ModelConfig;
use super::params::ParamLayout;
use crate::engine::{ComputationRecord, NodeId, RecordBuilder, Tensor, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::oracle::{check_len, norm_sq, EnergyOracle};

/// A batch of equal-length token sequences with next-token targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Row-major `[sequences, seq_len]`.
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub sequences: usize,
    pub seq_len: usize,
}

impl Batch {
    /// Builds a batch from windows of `seq_len + 1` tokens: inputs are the first
    /// `seq_len`, targets the last `seq_len`.
    pub fn from_windows(windows: &[Vec<usize>]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::invalid("batch needs at least one sequence"))?;
        if first.len() < 2 {
            return Err(Error::invalid("sequences need at least two tokens"));
        }
        let seq_len = first.len() - 1;
        let mut inputs = Vec::with_capacity(windows.len() * seq_len);
        let mut targets = Vec::with_capacity(windows.len() * seq_len);
        for w in windows {
            if w.len() != seq_len + 1 {
                return Err(Error::invalid("all sequences in a batch must have equal length"));
            }
            inputs.extend_from_slice(&w[..seq_len]);
            targets.extend_from_slice(&w[1..]);
        }
        Ok(Batch {
            inputs,
            targets,
            sequences: windows.len(),
            seq_len,
        })
    }

    pub fn predictions(&self) -> usize {
        self.targets.len()
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.seq_len == 0 || self.sequences == 0 {
            return Err(Error::invalid("empty batch"));
        }
        if self.seq_len > cfg.context {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds context {}",
                self.seq_len, cfg.context
            )));
        }
        let n = self.sequences * self.seq_len;
        if self.inputs.len() != n || self.targets.len() != n {
            return Err(Error::invalid("batch inputs/targets do not match its shape"));
        }
        if let Some(&t) = self.inputs.iter().chain(&self.targets).find(|&&t| t >= cfg.vocab) {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: cfg.vocab,
            });
        }
        Ok(())
    }
}

/// Pre-LayerNorm decoder-only transformer.
///
/// Blocks use learned LayerNorm gain and bias. The final normalization before
/// the unembedding has unit gain and zero bias, so the logits depend on the
/// residual stream only through its direction and ‖∇L‖ stays bounded along
/// rays θ₀ + r·u.
#[derive(Clone, Debug)]
pub struct Transformer {
    config: ModelConfig,
    layout: Arc<ParamLayout>,
}

impl Transformer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(ParamLayout::for_config(&config));
        Ok(Transformer { config, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn build(&self, theta: &[f64], batch: &Batch) -> Result<(RecordBuilder, NodeId)> {
        check_len(self.dim(), theta.len())?;
        batch.validate(&self.config)?;
        let cfg = &self.config;
        let (bsz, t, d, h) = (batch.sequences, batch.seq_len, cfg.d_model, cfg.heads);
        let dh = cfg.head_dim();
        let rows = bsz * t;

        let mut g = RecordBuilder::new();
        let params: Vec<NodeId> = self
            .layout
            .entries()
            .iter()
            .map(|e| {
                let data = theta[e.range.clone()].to_vec();
                g.param(Tensor::new(e.shape.clone(), data).expect("layout shape"))
            })
            .collect();
        let entry_index = |layer: Option<usize>, name: &str| -> NodeId {
            let idx = self
                .layout
                .entries()
                .iter()
                .position(|e| e.layer == layer && e.name == name)
                .expect("layout entry");
            params[idx]
        };

        let positions: Vec<usize> = (0..bsz).flat_map(|_| 0..t).collect();
        let tok = g.embedding(entry_index(None, "tok_emb"), &batch.inputs)?;
        let pos = g.embedding(entry_index(None, "pos_emb"), &positions)?;
        let mut x = g.add(tok, pos)?;

        let scale = 1.0 / (dh as f64).sqrt();
        for l in 0..cfg.layers {
            let p = |name: &str| entry_index(Some(l), name);
            let a = g.layer_norm(x, p("ln1.gain"), p("ln1.bias"), LAYER_NORM_EPS)?;
            let mut heads = Vec::with_capacity(3);
            for (w, b) in [("attn.wq", "attn.bq"), ("attn.wk", "attn.bk"), ("attn.wv", "attn.bv")] {
                let proj = g.matmul(a, p(w))?;
                let proj = g.add_row(proj, p(b))?;
                // [rows, d] -> [bsz, t, h, dh] -> [bsz, h, t, dh] -> [bsz·h, t, dh]
                let proj = g.reshape(proj, vec![bsz, t, h, dh])?;
                let proj = g.transpose(proj, &[0, 2, 1, 3])?;
                heads.push(g.reshape(proj, vec![bsz * h, t, dh])?);
            }
            let (q, k, v) = (heads[0], heads[1], heads[2]);
            let kt = g.transpose(k, &[0, 2, 1])?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale);
            let att = g.causal_softmax(scores)?;
            let ctx = g.matmul(att, v)?;
            let ctx = g.reshape(ctx, vec![bsz, h, t, dh])?;
            let ctx = g.transpose(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, vec![rows, d])?;
            let o = g.matmul(ctx, p("attn.wo"))?;
            let o = g.add_row(o, p("attn.bo"))?;
            x = g.add(x, o)?;

            let m = g.layer_norm(x, p("ln2.gain"), p("ln2.bias"), LAYER_NORM_EPS)?;
            let f = g.matmul(m, p("mlp.w1"))?;
            let f = g.add_row(f, p("mlp.b1"))?;
            let f = g.gelu(f);
            let f = g.matmul(f, p("mlp.w2"))?;
            let f = g.add_row(f, p("mlp.b2"))?;
            x = g.add(x, f)?;
        }

        let unit = g.constant(Tensor::vector(vec![1.0; d]));
        let zero = g.constant(Tensor::vector(vec![0.0; d]));
        let n = g.layer_norm(x, unit, zero, LAYER_NORM_EPS)?;
        let logits = g.matmul(n, entry_index(None, "unembed.w"))?;
        let logits = g.add_row(logits, entry_index(None, "unembed.b"))?;
        Ok((g, logits))
    }

    /// Record whose scalar output is the mean next-token cross-entropy L(θ).
    pub fn loss_record(&self, theta: &[f64], batch: &Batch) -> Result<ComputationRecord> {
        let (mut g, logits) = self.build(theta, batch)?;
        let loss = g.cross_entropy(logits, &batch.targets)?;
        Ok(g.finish(loss))
    }

    /// Logits `[sequences·seq_len, vocab]`.
    pub fn logits(&self, theta: &[f64], batch: &Batch) -> Result<Tensor<f64>> {
        let (g, logits) = self.build(theta, batch)?;
        Ok(g.finish(logits).output().clone())
    }

    /// Data loss L(θ): mean negative log-probability of the targets.
    pub fn data_loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        self.loss_record(theta, batch)?.value()
    }

    /// F(θ) = L(θ) + (λ/2)‖θ‖².
    pub fn regularized_loss(&self, theta: &[f64], batch: &Batch, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid("weight decay must be nonnegative"));
        }
        Ok(self.data_loss(theta, batch)? + 0.5 * lambda * norm_sq(theta))
    }

    /// Summed cross-entropy and number of argmax errors over a batch.
    pub fn evaluate(&self, theta: &[f64], batch: &Batch) -> Result<(f64, usize)> {
        let logits = self.logits(theta, batch)?;
        let v = self.config.vocab;
        let mut nll = 0.0;
        let mut errors = 0;
        for (row, &t) in logits.data().chunks(v).zip(&batch.targets) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            nll += lse - row[t];
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &z)| if z > best.1 { (i, z) } else { best })
                .0;
            if argmax != t {
                errors += 1;
            }
        }
        Ok((nll, errors))
    }
}

/// The data term L on a fixed batch as an [`EnergyOracle`].
#[derive(Clone, Debug)]
pub struct TransformerLoss {
    pub model: Transformer,
    pub batch: Batch,
}

impl TransformerLoss {
    pub fn new(model: Transformer, batch: Batch) -> Result<Self> {
        batch.validate(model.config())?;
        Ok(TransformerLoss { model, batch })
    }
}

impl EnergyOracle for TransformerLoss {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.model.data_loss(theta, &self.batch)
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.model.loss_record(theta, &self.batch)?.gradient()
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let rec = self.model.loss_record(theta, &self.batch)?;
        Ok((rec.value()?, rec.gradient()?))
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.model.loss_record(theta, &self.batch)?.hvp(v)
    }

    fn hvp_many(&self, theta: &[f64], vs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let rec = self.model.loss_record(theta, &self.batch)?;
        vs.iter().map(|v| rec.hvp(v)).collect()
    }
}

/// The data term L over several batches: the prediction-weighted mean of the
/// per-batch losses, so that it equals the mean loss over every target.
#[derive(Clone, Debug)]
pub struct CorpusLoss {
    pub model: Transformer,
    pub batches: Vec<Batch>,
    weights: Vec<f64>,
}

impl CorpusLoss {
    pub fn new(model: Transformer, batches: Vec<Batch>) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::invalid("corpus loss needs at least one batch"));
        }
        for b in &batches {
            b.validate(model.config())?;
        }
        let total: usize = batches.iter().map(Batch::predictions).sum();
        let weights = batches
            .iter()
            .map(|b| b.predictions() as f64 / total as f64)
            .collect();
        Ok(CorpusLoss {
            model,
            batches,
            weights,
        })
    }

    pub fn predictions(&self) -> usize {
        self.batches.iter().map(Batch::predictions).sum()
    }

    fn weighted_sum<T>(
        &self,
        f: impl Fn(&Batch) -> Result<T>,
        combine: impl Fn(&mut T, T, f64),
        scale: impl Fn(&mut T, f64),
    ) -> Result<T> {
        let parts = self
            .batches
            .iter()
            .map(&f)
            .collect::<Result<Vec<T>>>()?;
        let mut it = parts.into_iter().zip(&self.weights);
        let (mut acc, w0) = it.next().expect("at least one batch");
        scale(&mut acc, *w0);
        for (part, &w) in it {
            combine(&mut acc, part, w);
        }
        Ok(acc)
    }
}

fn axpy(acc: &mut [f64], x: &[f64], w: f64) {
    acc.iter_mut().zip(x).for_each(|(a, x)| *a += w * x);
}

fn scale_vec(acc: &mut [f64], w: f64) {
    acc.iter_mut().for_each(|a| *a *= w);
}

impl EnergyOracle for CorpusLoss {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        self.weighted_sum(
            |b| self.model.data_loss(theta, b),
            |a, x, w| *a += w * x,
            |a, w| *a *= w,
        )
    }

    fn grad(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.weighted_sum(
            |b| self.model.loss_record(theta, b)?.gradient(),
            |a, x, w| axpy(a, &x, w),
            |a, w| scale_vec(a, w),
        )
    }

    fn value_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.weighted_sum(
            |b| {
                let rec = self.model.loss_record(theta, b)?;
                Ok((rec.value()?, rec.gradient()?))
            },
            |a, x, w| {
                a.0 += w * x.0;
                axpy(&mut a.1, &x.1, w);
            },
            |a, w| {
                a.0 *= w;
                scale_vec(&mut a.1, w);
            },
        )
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        self.weighted_sum(
            |b| self.model.loss_record(theta, b)?.hvp(v),
            |a, x, w| axpy(a, &x, w),
            |a, w| scale_vec(a, w),
        )
    }

    fn hvp_many(&self, theta: &[f64], vs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.weighted_sum(
            |b| {
                let rec = self.model.loss_record(theta, b)?;
                vs.iter().map(|v| rec.hvp(v)).collect::<Result<Vec<_>>>()
            },
            |a, x, w| a.iter_mut().zip(&x).for_each(|(a, x)| axpy(a, x, w)),
            |a, w| a.iter_mut().for_each(|a| scale_vec(a, w)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_uniform_loss() {
        // θ = 0 makes every logit zero.
        let cfg = ModelConfig::tiny(1, 4, 2, 4, 3);
        let m = Transformer::new(cfg).unwrap();
        let batch = Batch::from_windows(&[vec![0, 1, 2, 3], vec![3, 2, 1, 0]]).unwrap();
        let theta = vec![0.0; m.dim()];
        let l = m.data_loss(&theta, &batch).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn out_of_range_token() {
        let m = Transformer::new(ModelConfig::tiny(1, 4, 2, 4, 3)).unwrap();
        let batch = Batch::from_windows(&[vec![0, 9]]).unwrap();
        let err = m.data_loss(&vec![0.0; m.dim()], &batch).unwrap_err();
        assert!(matches!(err, Error::TokenOutOfRange { token: 9, vocab: 4 }));
    }

    #[test]
    fn sequence_longer_than_context() {
        let m = Transformer::new(ModelConfig::tiny(1, 4, 2, 4, 2)).unwrap();
        let batch = Batch::from_windows(&[vec![0, 1, 2, 3]]).unwrap();
        assert!(m.data_loss(&vec![0.0; m.dim()], &batch).is_err());
    }

    #[test]
    fn regularized_adds_penalty() {
        let m = Transformer::new(ModelConfig::tiny(1, 4, 2, 4, 3)).unwrap();
        let batch = Batch::from_windows(&[vec![0, 1, 2]]).unwrap();
        let mut theta = vec![0.0; m.dim()];
        theta[0] = 6.0;
        theta[1] = 8.0;
        let l = m.data_loss(&theta, &batch).unwrap();
        let f = m.regularized_loss(&theta, &batch, 1e-2).unwrap();
        assert!((f - l - 0.5).abs() < 1e-14);
        assert_eq!(m.regularized_loss(&theta, &batch, 0.0).unwrap(), l);
    }

    #[test]
    fn corpus_loss_is_mean_over_all_targets() {
        let model = Transformer::new(ModelConfig::tiny(1, 4, 2, 5, 4)).unwrap();
        let windows = vec![vec![0, 1, 2], vec![3, 4, 0], vec![1, 1, 2]];
        let theta: Vec<f64> = (0..model.dim()).map(|i| ((i * 7 % 13) as f64 - 6.0) * 0.1).collect();
        let whole = TransformerLoss::new(model.clone(), Batch::from_windows(&windows).unwrap()).unwrap();
        let split = CorpusLoss::new(
            model,
            vec![
                Batch::from_windows(&windows[..2]).unwrap(),
                Batch::from_windows(&windows[2..]).unwrap(),
            ],
        )
        .unwrap();
        assert!((whole.value(&theta).unwrap() - split.value(&theta).unwrap()).abs() < 1e-14);
        let (g1, g2) = (whole.grad(&theta).unwrap(), split.grad(&theta).unwrap());
        assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-14));
        let v = vec![0.3; theta.len()];
        let (h1, h2) = (whole.hvp(&theta, &v).unwrap(), split.hvp_many(&theta, &[v]).unwrap());
        assert!(h1.iter().zip(&h2[0]).all(|(a, b)| (a - b).abs() < 1e-13));
    }
}

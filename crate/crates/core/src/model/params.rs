use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::ModelConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// 2-D weight matrix (counted for the operator-norm bound).
    Matrix,
    Bias,
    Gain,
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    /// `None` for parameters outside the transformer blocks.
    pub layer: Option<usize>,
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
    pub kind: ParamKind,
}

/// Ordered manifest of every trainable tensor of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    entries: Vec<ParamEntry>,
    dim: usize,
}

impl ParamLayout {
    pub fn for_config(cfg: &ModelConfig) -> Self {
        let (d, f, v, n) = (cfg.d_model, cfg.d_ff, cfg.vocab, cfg.context);
        let mut layout = ParamLayout {
            entries: Vec::new(),
            dim: 0,
        };
        layout.push(None, "tok_emb", vec![v, d], ParamKind::Embedding);
        layout.push(None, "pos_emb", vec![n, d], ParamKind::Embedding);
        for l in 0..cfg.layers {
            let l = Some(l);
            layout.push(l, "ln1.gain", vec![d], ParamKind::Gain);
            layout.push(l, "ln1.bias", vec![d], ParamKind::Bias);
            for (w, b) in [
                ("attn.wq", "attn.bq"),
                ("attn.wk", "attn.bk"),
                ("attn.wv", "attn.bv"),
                ("attn.wo", "attn.bo"),
            ] {
                layout.push(l, w, vec![d, d], ParamKind::Matrix);
                layout.push(l, b, vec![d], ParamKind::Bias);
            }
            layout.push(l, "ln2.gain", vec![d], ParamKind::Gain);
            layout.push(l, "ln2.bias", vec![d], ParamKind::Bias);
            layout.push(l, "mlp.w1", vec![d, f], ParamKind::Matrix);
            layout.push(l, "mlp.b1", vec![f], ParamKind::Bias);
            layout.push(l, "mlp.w2", vec![f, d], ParamKind::Matrix);
            layout.push(l, "mlp.b2", vec![d], ParamKind::Bias);
        }
        layout.push(None, "unembed.w", vec![d, v], ParamKind::Matrix);
        layout.push(None, "unembed.b", vec![v], ParamKind::Bias);
        layout
    }

    fn push(&mut self, layer: Option<usize>, name: &'static str, shape: Vec<usize>, kind: ParamKind) {
        let n: usize = shape.iter().product();
        self.entries.push(ParamEntry {
            layer,
            name,
            shape,
            range: self.dim..self.dim + n,
            kind,
        });
        self.dim += n;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn find(&self, layer: Option<usize>, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.layer == layer && e.name == name)
    }
}

/// Flat parameter vector θ with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn from_vec(layout: Arc<ParamLayout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                got: data.len(),
            });
        }
        Ok(ParamVector { data, layout })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        ParamVector {
            data: vec![0.0; layout.dim()],
            layout,
        }
    }

    /// Normal(0, 0.02²) weights and embeddings, unit gains, zero biases, with
    /// embedding rows clipped to `embed_bound`.
    pub fn init(layout: Arc<ParamLayout>, embed_bound: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut p = ParamVector::zeros(layout);
        for e in p.layout.clone().entries() {
            let slot = &mut p.data[e.range.clone()];
            match e.kind {
                ParamKind::Matrix | ParamKind::Embedding => {
                    slot.iter_mut().for_each(|x| *x = normal.sample(rng))
                }
                ParamKind::Gain => slot.fill(1.0),
                ParamKind::Bias => {}
            }
        }
        p.clip_embeddings(embed_bound);
        p
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// View of one named tensor.
    pub fn tensor(&self, layer: Option<usize>, name: &str) -> Option<&[f64]> {
        self.layout.find(layer, name).map(|e| &self.data[e.range.clone()])
    }

    /// Splits θ into per-tensor slices in layout order.
    pub fn unflatten(&self) -> Vec<(&ParamEntry, &[f64])> {
        self.layout
            .entries()
            .iter()
            .map(|e| (e, &self.data[e.range.clone()]))
            .collect()
    }

    /// Concatenates per-tensor slices back into a flat vector.
    pub fn flatten(layout: Arc<ParamLayout>, parts: &[&[f64]]) -> Result<Self> {
        let data: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
        Self::from_vec(layout, data)
    }

    /// Projects every embedding row onto the ball of radius `bound`.
    pub fn clip_embeddings(&mut self, bound: f64) {
        clip_embedding_rows(&self.layout, &mut self.data, bound);
    }

    /// Largest operator (spectral) norm over all weight matrices.
    pub fn max_operator_norm(&self) -> f64 {
        self.layout
            .entries()
            .iter()
            .filter(|e| e.kind == ParamKind::Matrix)
            .map(|e| {
                let m = nalgebra::DMatrix::from_row_slice(e.shape[0], e.shape[1], &self.data[e.range.clone()]);
                m.singular_values().max()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn clip_embedding_rows(layout: &ParamLayout, theta: &mut [f64], bound: f64) {
    for e in layout.entries().iter().filter(|e| e.kind == ParamKind::Embedding) {
        let cols = e.shape[1];
        for row in theta[e.range.clone()].chunks_mut(cols) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > bound {
                let s = bound / n;
                row.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_layout_size() {
        let layout = ParamLayout::for_config(&ModelConfig::default());
        // embeddings 64·32 + 16·32, per block 12 704, unembedding 32·64 + 64
        assert_eq!(layout.dim(), 2048 + 512 + 2 * 12_704 + 2112);
        let total: usize = layout.entries().iter().map(|e| e.range.len()).sum();
        assert_eq!(total, layout.dim());
    }

    #[test]
    fn unflatten_flatten_identity() {
        let layout = Arc::new(ParamLayout::for_config(&ModelConfig::tiny(1, 4, 2, 5, 3)));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = ParamVector::init(layout.clone(), 1.0, &mut rng);
        let parts: Vec<&[f64]> = p.unflatten().into_iter().map(|(_, s)| s).collect();
        let q = ParamVector::flatten(layout, &parts).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn clipping_bounds_embedding_rows() {
        let layout = Arc::new(ParamLayout::for_config(&ModelConfig::tiny(1, 4, 1, 5, 3)));
        let mut p = ParamVector::zeros(layout);
        p.as_mut_slice().iter_mut().for_each(|x| *x = 3.0);
        p.clip_embeddings(0.5);
        for row in p.tensor(None, "tok_emb").unwrap().chunks(4) {
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 0.5).abs() < 1e-12);
        }
        // non-embedding entries untouched
        assert_eq!(p.tensor(Some(0), "mlp.b1").unwrap()[0], 3.0);
    }
}

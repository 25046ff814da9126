use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{clip_embedding_rows, Batch, Corpus, CorpusLoss, Transformer, TransformerLoss};
use crate::oracle::EnergyOracle;

/// A data term with exact and stochastic gradient access.
pub trait TrainingProblem: Sync {
    fn dim(&self) -> usize;

    /// Exact data loss L(θ) and ∇L(θ).
    fn full(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Unbiased stochastic estimate of ∇L(θ).
    fn stochastic_grad(&self, theta: &[f64], batch_size: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>>;

    /// Projection applied after every update.
    fn project(&self, _theta: &mut [f64]) {}
}

/// Deterministic full-batch gradients of an oracle.
pub struct FullBatch<O>(pub O);

impl<O: EnergyOracle> TrainingProblem for FullBatch<O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn full(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.0.value_and_grad(theta)
    }

    fn stochastic_grad(&self, theta: &[f64], _batch_size: usize, _rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        self.0.grad(theta)
    }
}

/// Exact gradients plus isotropic noise `ξ ~ N(0, (σ²/d)·I)`, so `E‖ξ‖² = σ²`.
pub struct NoisyGradient<O> {
    pub oracle: O,
    pub sigma_sq: f64,
}

impl<O: EnergyOracle> TrainingProblem for NoisyGradient<O> {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn full(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.oracle.value_and_grad(theta)
    }

    fn stochastic_grad(&self, theta: &[f64], _batch_size: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        let sd = (self.sigma_sq / self.dim() as f64).sqrt();
        let mut g = self.oracle.grad(theta)?;
        for x in &mut g {
            let z: f64 = StandardNormal.sample(rng);
            *x += sd * z;
        }
        Ok(g)
    }
}

/// Windows per evaluation batch.
pub const EVAL_BATCH: usize = 16;

/// Next-token prediction on a corpus: minibatches drawn from the whole
/// training split, exact loss over its first `eval_windows` windows, embedding
/// rows clipped to `B`.
pub struct CorpusProblem {
    pub model: Transformer,
    pub corpus: Corpus,
    full: CorpusLoss,
}

impl CorpusProblem {
    pub fn new(model: Transformer, corpus: Corpus, eval_windows: usize) -> Result<Self> {
        let n = eval_windows.min(corpus.train.len());
        let batches = corpus.train[..n]
            .chunks(EVAL_BATCH)
            .map(Batch::from_windows)
            .collect::<Result<Vec<_>>>()?;
        let full = CorpusLoss::new(model.clone(), batches)?;
        Ok(CorpusProblem { model, corpus, full })
    }

    /// The data term on the evaluation subsample of the training split.
    pub fn data_oracle(&self) -> &CorpusLoss {
        &self.full
    }

    pub fn heldout_oracle(&self) -> Result<CorpusLoss> {
        CorpusLoss::new(self.model.clone(), self.corpus.heldout_batches(EVAL_BATCH)?)
    }
}

impl TrainingProblem for CorpusProblem {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn full(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.full.value_and_grad(theta)
    }

    fn stochastic_grad(&self, theta: &[f64], batch_size: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>> {
        let mut r = rng;
        let batch = self.corpus.sample_batch(batch_size, &mut r)?;
        TransformerLoss::new(self.model.clone(), batch)?.grad(theta)
    }

    fn project(&self, theta: &mut [f64]) {
        clip_embedding_rows(self.model.layout(), theta, self.model.config().embed_bound);
    }
}

pub(crate) fn gaussian_into(out: &mut [f64], scale: f64, rng: &mut impl Rng) {
    for x in out {
        let z: f64 = StandardNormal.sample(rng);
        *x += scale * z;
    }
}

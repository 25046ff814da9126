//! Synthetic token corpus drawn from a fixed-seed order-2 Markov chain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, weighted::WeightedAliasIndex};

use super::transformer::Batch;
use crate::error::{Error, Result};

/// Dirichlet concentration of each transition row; small values make the
/// chain peaked enough to be learnable.
const CONCENTRATION: f64 = 0.1;

/// Weight of the `prev1` row in each transition.
const RECENT_WEIGHT: f64 = 0.5;

/// Order-2 chain whose transition is the mixture
/// `P(· | a, b) = w·Q[b] + (1 − w)·R[a]` of two Dirichlet-drawn row tables,
/// so that both preceding tokens matter while the context table stays small.
#[derive(Clone, Debug)]
pub struct MarkovChain {
    vocab: usize,
    recent: Vec<Vec<f64>>,
    lagged: Vec<Vec<f64>>,
    recent_samplers: Vec<WeightedAliasIndex<f64>>,
    lagged_samplers: Vec<WeightedAliasIndex<f64>>,
}

fn dirichlet_rows(vocab: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<WeightedAliasIndex<f64>>) {
    let gamma = Gamma::new(CONCENTRATION, 1.0).expect("valid gamma");
    (0..vocab)
        .map(|_| {
            let mut w: Vec<f64> = (0..vocab).map(|_| gamma.sample(rng) + 1e-12).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            let sampler = WeightedAliasIndex::new(w.clone()).expect("positive weights");
            (w, sampler)
        })
        .unzip()
}

impl MarkovChain {
    pub fn new(vocab: usize, seed: u64) -> Result<Self> {
        if vocab < 2 {
            return Err(Error::invalid("vocabulary must have at least two symbols"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (recent, recent_samplers) = dirichlet_rows(vocab, &mut rng);
        let (lagged, lagged_samplers) = dirichlet_rows(vocab, &mut rng);
        Ok(MarkovChain {
            vocab,
            recent,
            lagged,
            recent_samplers,
            lagged_samplers,
        })
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// P(next | prev2, prev1).
    pub fn transition(&self, prev2: usize, prev1: usize) -> Vec<f64> {
        self.recent[prev1]
            .iter()
            .zip(&self.lagged[prev2])
            .map(|(q, r)| RECENT_WEIGHT * q + (1.0 - RECENT_WEIGHT) * r)
            .collect()
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<usize> {
        let mut seq = Vec::with_capacity(len);
        for i in 0..len {
            let next = if i < 2 {
                rng.random_range(0..self.vocab)
            } else if rng.random::<f64>() < RECENT_WEIGHT {
                Distribution::<usize>::sample(&self.recent_samplers[seq[i - 1]], rng)
            } else {
                Distribution::<usize>::sample(&self.lagged_samplers[seq[i - 2]], rng)
            };
            seq.push(next);
        }
        seq
    }

    /// Entropy rate in nats under the chain's stationary context distribution,
    /// estimated on a long sample. Lower bound for achievable held-out loss.
    pub fn entropy_rate(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = self.sample(samples + 2, &mut rng);
        let mut h = 0.0;
        for w in seq.windows(2) {
            let row = self.transition(w[0], w[1]);
            h -= row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        }
        h / (seq.len() - 1) as f64
    }
}

/// Fixed training and held-out windows of `seq_len + 1` tokens.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub train: Vec<Vec<usize>>,
    pub heldout: Vec<Vec<usize>>,
    pub vocab: usize,
    pub seq_len: usize,
}

impl Corpus {
    /// Draws independent windows; the chain and both splits are determined by
    /// `seed`.
    pub fn generate(
        vocab: usize,
        seq_len: usize,
        train_windows: usize,
        heldout_windows: usize,
        seed: u64,
    ) -> Result<Self> {
        if seq_len == 0 {
            return Err(Error::invalid("sequence length must be positive"));
        }
        let chain = MarkovChain::new(vocab, seed)?;
        let mut train_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_6169_6e00);
        let mut held_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6865_6c64_0000);
        let train = (0..train_windows)
            .map(|_| chain.sample(seq_len + 1, &mut train_rng))
            .collect();
        let heldout = (0..heldout_windows)
            .map(|_| chain.sample(seq_len + 1, &mut held_rng))
            .collect();
        Ok(Corpus {
            train,
            heldout,
            vocab,
            seq_len,
        })
    }

    /// Number of next-token predictions in the training split.
    pub fn train_predictions(&self) -> usize {
        self.train.len() * self.seq_len
    }

    pub fn sample_batch(&self, size: usize, rng: &mut impl Rng) -> Result<Batch> {
        if self.train.is_empty() {
            return Err(Error::invalid("empty training split"));
        }
        let windows: Vec<Vec<usize>> = (0..size)
            .map(|_| self.train[rng.random_range(0..self.train.len())].clone())
            .collect();
        Batch::from_windows(&windows)
    }

    /// Training split cut into consecutive batches of at most `size` windows.
    pub fn train_batches(&self, size: usize) -> Result<Vec<Batch>> {
        chunked(&self.train, size)
    }

    pub fn heldout_batches(&self, size: usize) -> Result<Vec<Batch>> {
        chunked(&self.heldout, size)
    }
}

fn chunked(windows: &[Vec<usize>], size: usize) -> Result<Vec<Batch>> {
    if size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    windows.chunks(size).map(Batch::from_windows).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = Corpus::generate(16, 8, 10, 5, 42).unwrap();
        let b = Corpus::generate(16, 8, 10, 5, 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.heldout, b.heldout);
        assert_ne!(a.train, a.heldout[..5].to_vec());
    }

    #[test]
    fn rows_are_distributions() {
        let chain = MarkovChain::new(8, 1).unwrap();
        for a in 0..8 {
            for b in 0..8 {
                let s: f64 = chain.transition(a, b).iter().sum();
                assert_ne!(chain.transition(a, b), chain.transition((a + 1) % 8, b));
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_is_learnable() {
        // peaked rows: entropy rate well below the uniform ln V
        let chain = MarkovChain::new(64, 0).unwrap();
        assert!(chain.entropy_rate(5_000, 1) < 0.75 * 64f64.ln());
    }
}

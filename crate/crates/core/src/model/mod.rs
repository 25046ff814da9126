//! Tiny decoder-only transformer and the regularized objective
//! `F(θ) = L(θ) + (λ/2)‖θ‖²`.

mod checkpoint;
mod config;
mod constants;
mod corpus;
mod params;
mod transformer;

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::ModelConfig;
pub use constants::{appendix_constants, AppendixConstants};
pub use corpus::{Corpus, MarkovChain};
pub(crate) use params::clip_embedding_rows;
pub use params::{ParamEntry, ParamKind, ParamLayout, ParamVector};
pub use transformer::{Batch, CorpusLoss, Transformer, TransformerLoss};

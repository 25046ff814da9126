//! SGD and noisy SGD over a data term, with logging and parameter snapshots.

mod eval;
mod problem;
mod run;

pub use eval::{evaluate_heldout, evaluate_perplexity, HeldoutMetrics};
pub use problem::{CorpusProblem, FullBatch, NoisyGradient, TrainingProblem, EVAL_BATCH};
pub use run::{
    lambda_sweep, sgd_step, train, NoiseConfig, Optimizer, Schedule, Snapshot, TraceRow, TrainConfig, TrainTrace,
    LAMBDA_GRID,
};

//! Experiment configuration: a TOML file with the sections `model`, `train`,
//! `diagnostics`, `spectral`, `theory` and `output`. Every key is optional and
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use villani_core::diagnostics::{ProbeConfig, ProbeDistribution};
use villani_core::model::ModelConfig;
use villani_core::trainer::{TrainConfig, LAMBDA_GRID};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub diagnostics: DiagnosticsSection,
    pub spectral: SpectralSection,
    pub theory: TheorySection,
    pub output: OutputSection,
}

/// Architecture and toy corpus. λ lives in `train.lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub context: usize,
    pub embed_bound: f64,
    pub train_windows: usize,
    pub heldout_windows: usize,
    /// Training windows used for the logged loss and the empirical risk.
    pub eval_windows: usize,
    pub corpus_seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            layers: m.layers,
            d_model: m.d_model,
            heads: m.heads,
            d_ff: m.d_ff,
            vocab: m.vocab,
            context: m.context,
            embed_bound: m.embed_bound,
            train_windows: 2_048,
            heldout_windows: 64,
            eval_windows: 256,
            corpus_seed: 0,
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, lambda: f64) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            d_model: self.d_model,
            heads: self.heads,
            d_ff: self.d_ff,
            vocab: self.vocab,
            context: self.context,
            embed_bound: self.embed_bound,
            weight_decay: lambda,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landscape {
    /// The toy transformer on the synthetic corpus.
    Toy,
    /// `(λ/2)‖θ‖²` in `synthetic_dim` dimensions.
    PureQuadratic,
    /// `(λ/2)‖θ‖² + Σ sin(3θᵢ)` in `synthetic_dim` dimensions.
    QuadraticPlusBounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsSection {
    pub landscape: Landscape,
    pub synthetic_dim: usize,
    pub s: f64,
    pub probes: usize,
    pub distribution: ProbeDistribution,
    pub probe_seed: u64,
    pub directions: usize,
    pub direction_seed: u64,
    pub radii: usize,
    /// First radius; defaults to `2C₁/λ` for the smallest positive λ.
    pub radius_start: Option<f64>,
    /// Ratio of the last radius to the first.
    pub radius_factor: f64,
    pub lambdas: Vec<f64>,
    /// Training windows in the ray batch.
    pub ray_windows: usize,
    /// Training windows in the per-checkpoint Ψ batch.
    pub checkpoint_windows: usize,
    pub subspace_grid: usize,
    pub subspace_extent: f64,
    pub subspace_seed: u64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            landscape: Landscape::Toy,
            synthetic_dim: 1_000,
            s: 1.0,
            probes: 64,
            distribution: ProbeDistribution::Rademacher,
            probe_seed: 7,
            directions: 5,
            direction_seed: 1,
            radii: 8,
            radius_start: None,
            radius_factor: 100.0,
            lambdas: LAMBDA_GRID.to_vec(),
            ray_windows: 4,
            checkpoint_windows: 8,
            subspace_grid: 21,
            subspace_extent: 40.0,
            subspace_seed: 3,
        }
    }
}

impl DiagnosticsSection {
    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            count: self.probes,
            distribution: self.distribution,
            seed: self.probe_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralSection {
    pub k: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Training windows in the Hessian batch.
    pub windows: usize,
}

impl Default for SpectralSection {
    fn default() -> Self {
        SpectralSection {
            k: 20,
            max_iter: 80,
            tol: 1e-8,
            seed: 0,
            windows: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    /// From the trainer's measured gradient noise.
    Noise,
    /// `β = λ⁻¹`.
    InverseDecay,
    /// The value of `theory.beta`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheorySection {
    pub s: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub beta_source: BetaSource,
    pub beta: Option<f64>,
    /// Smoothness constant; defaults to 1.1 × the top Ritz value at the
    /// final checkpoint.
    pub l_smooth: Option<f64>,
    /// Lower bound on the minimum of F; defaults to 0.
    pub f_star: Option<f64>,
    pub benchmark: EnvelopeBenchmark,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            s: 1.0,
            epsilon: 1e-2,
            delta: 0.05,
            beta_source: BetaSource::Noise,
            beta: None,
            l_smooth: None,
            f_star: None,
            benchmark: EnvelopeBenchmark::default(),
        }
    }
}

/// Noisy SGD on `(λ/2)‖θ‖² + a·Σ sin(ωθᵢ)`, whose minimum is known.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeBenchmark {
    pub dim: usize,
    pub amplitude: f64,
    pub frequency: f64,
    pub lambda: f64,
    pub eta: f64,
    /// `E‖ξ‖²` of the added gradient noise.
    pub sigma_sq: f64,
    /// Inverse temperature of the injected Langevin noise.
    pub beta_train: f64,
    pub steps: u64,
    pub log_every: u64,
    pub seeds: u64,
    /// Every coordinate of θ₀.
    pub start: f64,
}

impl Default for EnvelopeBenchmark {
    fn default() -> Self {
        EnvelopeBenchmark {
            dim: 100,
            amplitude: 0.05,
            frequency: 3.0,
            lambda: 1.0,
            eta: 0.01,
            sigma_sq: 1.0,
            beta_train: 1e5,
            steps: 60_000,
            log_every: 100,
            seeds: 5,
            start: 2.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Run root when neither `--out` nor `VILLANI_OUT` is given.
    pub root: Option<PathBuf>,
    pub plot: bool,
}

fn check(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Usage(format!("invalid config: {msg}")))
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .model_config(self.train.lambda)
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid config: model: {e}")))?;
        self.train
            .validate()
            .map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        let m = &self.model;
        check(m.train_windows > 0, "model.train_windows must be positive")?;
        check(m.eval_windows > 0, "model.eval_windows must be positive")?;
        let d = &self.diagnostics;
        check(d.synthetic_dim > 0, "diagnostics.synthetic_dim must be positive")?;
        check(positive(d.s), "diagnostics.s must be positive")?;
        check(d.probes > 0, "diagnostics.probes must be positive")?;
        check(d.directions > 0, "diagnostics.directions must be positive")?;
        check(d.radii >= 2, "diagnostics.radii must be at least 2")?;
        check(d.radius_factor > 1.0 && d.radius_factor.is_finite(), "diagnostics.radius_factor must exceed 1")?;
        check(d.radius_start.is_none_or(positive), "diagnostics.radius_start must be positive")?;
        check(!d.lambdas.is_empty(), "diagnostics.lambdas must not be empty")?;
        check(
            d.lambdas.iter().all(|l| *l >= 0.0 && l.is_finite()),
            "diagnostics.lambdas must be nonnegative",
        )?;
        check(d.ray_windows > 0 && d.checkpoint_windows > 0, "diagnostics window counts must be positive")?;
        check(d.subspace_grid >= 3, "diagnostics.subspace_grid must be at least 3")?;
        check(positive(d.subspace_extent), "diagnostics.subspace_extent must be positive")?;
        let s = &self.spectral;
        check(s.k >= 1 && s.max_iter >= s.k, "spectral needs 1 ≤ k ≤ max_iter")?;
        check(positive(s.tol), "spectral.tol must be positive")?;
        check(s.windows > 0, "spectral.windows must be positive")?;
        let t = &self.theory;
        check(positive(t.s), "theory.s must be positive")?;
        check(positive(t.epsilon), "theory.epsilon must be positive")?;
        check(t.delta > 0.0 && t.delta < 1.0, "theory.delta must lie in (0, 1)")?;
        check(t.beta.is_none_or(positive), "theory.beta must be positive")?;
        check(
            t.beta_source != BetaSource::Fixed || t.beta.is_some(),
            "theory.beta_source = \"fixed\" needs theory.beta",
        )?;
        check(t.l_smooth.is_none_or(positive), "theory.l_smooth must be positive")?;
        let b = &t.benchmark;
        check(b.dim > 0 && b.seeds > 0 && b.log_every > 0, "theory.benchmark sizes must be positive")?;
        check(positive(b.lambda) && positive(b.eta), "theory.benchmark lambda and eta must be positive")?;
        check(positive(b.sigma_sq) && positive(b.beta_train), "theory.benchmark noise must be positive")?;
        check(positive(b.frequency) && b.amplitude >= 0.0, "theory.benchmark amplitude/frequency invalid")?;
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over [`Self::to_toml`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = ExperimentConfig::parse("[train]\netaa = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("etaa"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_section_rejected() {
        assert!(ExperimentConfig::parse("[plots]\nx = 1\n").is_err());
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.lambda = 0.0;
        cfg.theory.l_smooth = Some(2.5);
        cfg.diagnostics.lambdas = vec![1e-3];
        let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_every_field() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.spectral.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn semantic_validation() {
        assert!(ExperimentConfig::parse("[model]\nd_model = 30\nheads = 4\n").is_err());
        assert!(ExperimentConfig::parse("[diagnostics]\nsubspace_grid = 2\n").is_err());
        assert!(ExperimentConfig::parse("[theory]\nbeta_source = \"fixed\"\n").is_err());
        assert!(ExperimentConfig::parse("[theory]\nbeta_source = \"fixed\"\nbeta = 10.0\n").is_ok());
        assert!(ExperimentConfig::parse("[train]\neta = -1.0\n").is_err());
    }

    #[test]
    fn noise_section_parses() {
        let cfg = ExperimentConfig::parse("[train.noise]\nkind = \"langevin\"\nbeta = 1000.0\n").unwrap();
        assert_eq!(cfg.train.noise, villani_core::trainer::NoiseConfig::Langevin { beta: 1000.0 });
    }
}

//! One function per subcommand. Each writes into `<root>/<command>/`.

mod bounds;
mod pacbayes;
mod rays;
mod report;
mod spectrum;
mod subspace;
mod train;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use villani_core::model::{Batch, Checkpoint, Corpus, ModelConfig, ParamVector, Transformer};
use villani_core::trainer::CorpusProblem;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::output::RunDir;

pub use bounds::cmd_bounds;
pub use pacbayes::cmd_pacbayes;
pub use rays::cmd_rays;
pub use report::{cmd_report, REPORT_FILE};
pub use spectrum::cmd_spectrum;
pub use subspace::cmd_subspace;
pub use train::cmd_train;

pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const TRACE_FILE: &str = "trace.csv";

pub struct Context {
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
    pub plot: bool,
    pub quiet: bool,
}

impl Context {
    pub fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn run_dir(&self, name: &str) -> CliResult<RunDir> {
        RunDir::create(self.root.join(name), &self.cfg)
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn write_svg(&self, run: &RunDir, name: &str, svg: impl FnOnce(&str) -> String) -> CliResult<()> {
        if self.plot {
            run.write_text(name, &svg(&run.hash))?;
        }
        Ok(())
    }
}

pub fn corpus(cfg: &ExperimentConfig) -> CliResult<Corpus> {
    let m = &cfg.model;
    Ok(Corpus::generate(
        m.vocab,
        m.context,
        m.train_windows,
        m.heldout_windows,
        m.corpus_seed,
    )?)
}

pub fn toy_problem(cfg: &ExperimentConfig, model: ModelConfig) -> CliResult<CorpusProblem> {
    Ok(CorpusProblem::new(
        Transformer::new(model)?,
        corpus(cfg)?,
        cfg.model.eval_windows,
    )?)
}

pub fn init_theta(model: &Transformer, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ParamVector::init(model.layout().clone(), model.config().embed_bound, &mut rng).into_vec()
}

/// The first `n` training windows as one batch.
pub fn leading_batch(corpus: &Corpus, n: usize) -> CliResult<Batch> {
    let n = n.min(corpus.train.len());
    if n == 0 {
        return Err(CliError::runtime("the training split is empty"));
    }
    Ok(Batch::from_windows(&corpus.train[..n])?)
}

/// Checkpoints at `path`: a single file, a directory of `.ckpt` files, or a
/// run directory holding `checkpoints/`. Sorted by step.
pub fn checkpoint_series(path: &Path) -> CliResult<Vec<(PathBuf, Checkpoint)>> {
    let read = |p: &Path| {
        Checkpoint::read(p).map_err(|e| CliError::runtime(format!("{}: {e}", p.display())))
    };
    if path.is_file() {
        return Ok(vec![(path.to_path_buf(), read(path)?)]);
    }
    let dir = if path.join(CHECKPOINT_DIR).is_dir() {
        path.join(CHECKPOINT_DIR)
    } else {
        path.to_path_buf()
    };
    let entries = std::fs::read_dir(&dir)
        .map_err(|e| CliError::runtime(format!("no checkpoints at {}: {e}", path.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    let mut out = files
        .into_iter()
        .map(|p| Ok((p.clone(), read(&p)?)))
        .collect::<CliResult<Vec<_>>>()?;
    if out.is_empty() {
        return Err(CliError::runtime(format!("no .ckpt files under {}", dir.display())));
    }
    out.sort_by_key(|(_, c)| c.step);
    Ok(out)
}

/// Run directory a checkpoint series came from, for its trace.
pub fn run_dir_of(series_path: &Path) -> PathBuf {
    let base = if series_path.is_file() {
        series_path.parent().unwrap_or(Path::new("."))
    } else {
        series_path
    };
    if base.file_name().is_some_and(|n| n == CHECKPOINT_DIR) {
        base.parent().unwrap_or(base).to_path_buf()
    } else {
        base.to_path_buf()
    }
}

/// Checks that a checkpoint's architecture matches the configured corpus.
pub fn check_architecture(cfg: &ExperimentConfig, ckpt: &Checkpoint) -> CliResult<()> {
    let want = cfg.model.model_config(ckpt.config.weight_decay);
    if want != ckpt.config {
        return Err(CliError::runtime(format!(
            "checkpoint architecture {:?} differs from the configured model {:?}",
            ckpt.config, want
        )));
    }
    Ok(())
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

pub fn geometric_grid(start: f64, factor: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| start * factor.powf(i as f64 / (n - 1) as f64))
        .collect()
}

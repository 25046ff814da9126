use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use villani_cli::commands::{self, Context};
use villani_cli::config::ExperimentConfig;
use villani_cli::error::CliResult;

/// Environment variable naming the default run root.
const OUT_ENV: &str = "VILLANI_OUT";

#[derive(Parser)]
#[command(name = "villani", version, about = "Curvature and confinement diagnostics for weight-decayed transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run root; overrides VILLANI_OUT and output.root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the command's primary seed in the resolved config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Also render SVG plots.
    #[arg(long, global = true)]
    plot: bool,
    /// Checkpoint file or directory instead of `<root>/train`.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Train once per λ of the sweep grid.
    #[arg(long, global = true)]
    lambda_sweep: bool,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, PartialEq)]
enum Command {
    /// Train the toy model; writes trace, checkpoints and manifest.
    Train,
    /// Ψ along random radial rays for each configured λ.
    Rays,
    /// Top-k Hessian eigenvalues at every checkpoint.
    Spectrum,
    /// Energy on a random two-dimensional slice through a checkpoint.
    Subspace,
    /// Closed-form constants, envelope benchmark and PAC-Bayes report.
    Bounds,
    /// PAC-Bayes bounds, held-out risk and Ψ over a checkpoint series.
    Pacbayes,
    /// Collect all results under the run root into report.html.
    Report {
        /// Run root to collect; defaults to the resolved root.
        dir: Option<PathBuf>,
    },
    /// Print the resolved config.
    Config,
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        match cli.command {
            Command::Train | Command::Bounds | Command::Config => cfg.train.seed = seed,
            Command::Rays | Command::Pacbayes => cfg.diagnostics.probe_seed = seed,
            Command::Spectrum => cfg.spectral.seed = seed,
            Command::Subspace => cfg.diagnostics.subspace_seed = seed,
            Command::Report { .. } => {}
        }
    }
    let root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| cfg.output.root.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    let ctx = Context {
        plot: cli.plot || cfg.output.plot,
        cfg,
        root,
        quiet: cli.quiet,
    };
    let ck = cli.checkpoint.as_deref();
    match cli.command {
        Command::Train => commands::cmd_train(&ctx, cli.lambda_sweep).map(drop),
        Command::Rays => commands::cmd_rays(&ctx, ck).map(drop),
        Command::Spectrum => commands::cmd_spectrum(&ctx, ck).map(drop),
        Command::Subspace => commands::cmd_subspace(&ctx, ck).map(drop),
        Command::Bounds => commands::cmd_bounds(&ctx, ck).map(drop),
        Command::Pacbayes => commands::cmd_pacbayes(&ctx, ck).map(drop),
        Command::Report { dir } => {
            let path = commands::cmd_report(dir.as_deref().unwrap_or(&ctx.root))?;
            ctx.log(format!("wrote {}", path.display()));
            Ok(())
        }
        Command::Config => {
            print!("{}", ctx.cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const TINY: &str = r#"
[model]
layers = 1
d_model = 8
heads = 2
d_ff = 16
vocab = 16
context = 8
train_windows = 64
heldout_windows = 16
eval_windows = 32

[train]
steps = 40
warmup_steps = 4
checkpoint_every = 10
log_every = 5
sigma_every = 10
sigma_batches = 2

[diagnostics]
probes = 8
directions = 2
radii = 4
ray_windows = 2
checkpoint_windows = 2
subspace_grid = 7

[spectral]
k = 4
max_iter = 12
windows = 2

[theory.benchmark]
dim = 10
steps = 2000
seeds = 2
"#;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{TINY}\n{extra}")).unwrap();
    path
}

/// Appends `extra` keys under `[section]` of the tiny config.
fn with(section: &str, keys: &str) -> String {
    let text = TINY.replace(&format!("[{section}]\n"), &format!("[{section}]\n{keys}\n"));
    assert_ne!(text, TINY, "section {section} not in the tiny config");
    text
}

fn villani(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_villani"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env_remove("VILLANI_OUT")
        .output()
        .unwrap()
}

fn run_ok(args: &[&str], out: &Path) {
    let o = villani(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn missing_config_exits_2_and_names_the_path() {
    let dir = scratch("missing");
    let o = villani(&["train", "--config", "/no/such/villani.toml"], &dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/villani.toml"));
}

#[test]
fn unknown_key_exits_2_with_its_name() {
    let dir = scratch("unknown");
    let cfg = config(&dir, "[output]\nbogus_key = 1\n");
    let o = villani(&["train", "--config", cfg.to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_key"));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let dir = scratch("flag");
    assert_eq!(villani(&["train", "--no-such-flag"], &dir).status.code(), Some(2));
}

#[test]
fn zero_steps_leaves_only_the_initial_checkpoint() {
    let dir = scratch("zero");
    let cfg = write_config(&dir, &with("train", "steps = 0").replace("steps = 40\n", ""));
    run_ok(&["train", "--config", cfg.to_str().unwrap()], &dir);
    let ckpts: Vec<_> = fs::read_dir(dir.join("train/checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 1);
    assert!(dir.join("train/checkpoints/step_000000.ckpt").exists());
    let trace = fs::read_to_string(dir.join("train/trace.csv")).unwrap();
    // hash comment, header, initial row
    assert_eq!(trace.lines().count(), 3);
    let manifest = json(&dir.join("train/manifest.json"));
    assert_eq!(manifest["steps"], 0);
}

#[test]
fn every_output_carries_the_config_hash() {
    let dir = scratch("hash");
    let cfg = config(&dir, "");
    let c = cfg.to_str().unwrap();
    run_ok(&["train", "--config", c, "--plot"], &dir);
    let stamp = fs::read_to_string(dir.join("train/config.resolved.toml")).unwrap();
    let hash = stamp.lines().next().unwrap().strip_prefix("# config_hash=").unwrap().to_string();
    for f in ["trace.csv", "heldout.csv"] {
        let text = fs::read_to_string(dir.join("train").join(f)).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_hash={hash}"));
    }
    assert_eq!(json(&dir.join("train/manifest.json"))["config_hash"], hash.as_str());
    assert!(fs::read_to_string(dir.join("train/trace.svg")).unwrap().contains(&hash));
    let ck = villani_core::model::Checkpoint::read(&dir.join("train/checkpoints/step_000040.ckpt")).unwrap();
    assert_eq!(ck.extra["config_hash"], hash);

    // a different seed resolves to a different config
    let other = scratch("hash-seed");
    run_ok(&["train", "--config", c, "--seed", "5"], &other);
    let stamp2 = fs::read_to_string(other.join("train/config.resolved.toml")).unwrap();
    assert_ne!(stamp.lines().next(), stamp2.lines().next());
}

#[test]
fn locked_directory_is_refused() {
    let dir = scratch("lock");
    fs::create_dir_all(dir.join("train")).unwrap();
    fs::write(dir.join("train/.villani.lock"), "1").unwrap();
    let cfg = config(&dir, "");
    let o = villani(&["train", "--config", cfg.to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("locked"));
}

#[test]
fn lambda_sweep_writes_one_directory_per_lambda() {
    let dir = scratch("sweep");
    let cfg = write_config(&dir, &with("train", "steps = 5").replace("steps = 40\n", ""));
    run_ok(&["train", "--config", cfg.to_str().unwrap(), "--lambda-sweep"], &dir);
    for l in ["0e0", "1e-4", "1e-3", "1e-2"] {
        let m = json(&dir.join(format!("train/lambda_{l}/manifest.json")));
        assert_eq!(m["lambda"].as_f64().unwrap(), l.parse::<f64>().unwrap());
        assert!(dir.join(format!("train/lambda_{l}/checkpoints/step_000005.ckpt")).exists());
    }
}

#[test]
fn pure_quadratic_rays_have_slope_lambda_squared_over_s() {
    let dir = scratch("rays");
    let text = with(
        "diagnostics",
        "landscape = \"pure_quadratic\"\nsynthetic_dim = 50\ns = 2.0\nlambdas = [0.0, 0.5, 2.0]",
    );
    let cfg = write_config(&dir, &text);
    run_ok(&["rays", "--config", cfg.to_str().unwrap(), "--plot"], &dir);
    let v = json(&dir.join("rays/rays.json"));
    for entry in v["lambdas"].as_array().unwrap() {
        let lambda = entry["lambda"].as_f64().unwrap();
        let target = entry["target_slope"].as_f64().unwrap();
        assert!((target - lambda * lambda / 2.0).abs() < 1e-15);
        let slope = entry["pooled"]["slope"].as_f64().unwrap();
        assert!((slope - target).abs() <= 1e-9 * target.max(1.0), "λ={lambda}: {slope} vs {target}");
    }
    assert_eq!(v["monotone_in_lambda"], true);
    let csv = fs::read_to_string(dir.join("rays/rays.csv")).unwrap();
    assert_eq!(
        csv.lines().nth(1).unwrap(),
        "lambda,direction_id,radius,theta_norm_sq,trace_est,trace_std_err,grad_norm_sq,psi_est,s,M,seed"
    );
    assert!(fs::metadata(dir.join("rays/rays.svg")).unwrap().len() > 0);
}

#[test]
fn bounds_at_zero_decay_fail_with_a_structured_report() {
    let dir = scratch("bounds-zero");
    let cfg = write_config(&dir, &with("train", "lambda = 0.0"));
    let o = villani(&["bounds", "--config", cfg.to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(1));
    let v = json(&dir.join("bounds/bounds.json"));
    assert_eq!(v["status"], "failed");
    assert_eq!(v["lambda"], 0.0);
    assert!(v["error"].as_str().unwrap().contains("log-Sobolev"));
}

#[test]
fn subspace_grid_three_runs_and_two_is_rejected() {
    let dir = scratch("grid");
    let text = with("diagnostics", "landscape = \"pure_quadratic\"\nsynthetic_dim = 20").replace("subspace_grid = 7", "subspace_grid = 3");
    let cfg = write_config(&dir, &text);
    run_ok(&["subspace", "--config", cfg.to_str().unwrap(), "--plot"], &dir);
    let v = json(&dir.join("subspace/subspace.json"));
    let fit = &v["slices"].as_array().unwrap().last().unwrap()["fit"];
    // concentric circles about the origin
    assert!((fit["anisotropy"].as_f64().unwrap() - 1.0).abs() < 1e-9);
    assert!(fit["centre"][0].as_f64().unwrap().abs() < 1e-9);
    let csv = fs::read_to_string(dir.join("subspace/subspace.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "a,b,lambda,F");
    assert_eq!(csv.lines().count(), 2 + 2 * 9);

    let bad = scratch("grid-two");
    let cfg = write_config(&bad, &text.replace("subspace_grid = 3", "subspace_grid = 2"));
    assert_eq!(villani(&["subspace", "--config", cfg.to_str().unwrap()], &bad).status.code(), Some(2));
}

fn anisotropy(root: &Path) -> f64 {
    let v = json(&root.join("subspace/subspace.json"));
    let slice = v["slices"].as_array().unwrap().last().unwrap().clone();
    slice["fit"]["anisotropy"].as_f64().unwrap_or(f64::INFINITY)
}

#[test]
fn decay_makes_subspace_contours_rounder() {
    let mut aniso = vec![];
    for (name, lambda) in [("free", "0.0"), ("decayed", "0.001")] {
        let dir = scratch(&format!("paired-{name}"));
        let cfg = write_config(&dir, &with("train", &format!("lambda = {lambda}")));
        let c = cfg.to_str().unwrap();
        run_ok(&["train", "--config", c, "--seed", "3"], &dir);
        run_ok(&["subspace", "--config", c, "--plot"], &dir);
        aniso.push(anisotropy(&dir));
    }
    assert!(aniso[1] < aniso[0], "anisotropy λ=1e-3 {} vs λ=0 {}", aniso[1], aniso[0]);
}

#[test]
fn checkpoint_version_mismatch_names_both_versions() {
    let dir = scratch("version");
    let cfg = config(&dir, "");
    let c = cfg.to_str().unwrap();
    run_ok(&["train", "--config", c], &dir);
    let path = dir.join("train/checkpoints/step_000040.ckpt");
    let mut bytes = fs::read(&path).unwrap();
    // format version follows the 8-byte magic
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    let bad = dir.join("bad.ckpt");
    fs::write(&bad, bytes).unwrap();
    let o = villani(&["spectrum", "--config", c, "--checkpoint", bad.to_str().unwrap()], &dir);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("99") && err.contains('1'), "{err}");
}

#[test]
fn full_pipeline_and_report() {
    let dir = scratch("pipeline");
    let cfg = config(&dir, "");
    let c = cfg.to_str().unwrap();
    for cmd in ["train", "rays", "spectrum", "subspace", "bounds", "pacbayes"] {
        run_ok(&[cmd, "--config", c, "--plot"], &dir);
    }
    let pb = json(&dir.join("pacbayes/pacbayes.json"));
    assert_eq!(pb["checkpoints"], 5);
    assert!(pb["coverage"].as_f64().unwrap() >= 0.0);
    let csv = fs::read_to_string(dir.join("pacbayes/pacbayes.csv")).unwrap();
    assert_eq!(
        csv.lines().nth(1).unwrap(),
        "checkpoint_id,step,theta_norm_sq,empirical_risk,f_hat,heldout_risk,perplexity,psi_est,psi_std_err,bound,valid"
    );
    let env = fs::read_to_string(dir.join("bounds/envelope.csv")).unwrap();
    assert_eq!(
        env.lines().nth(1).unwrap(),
        "step,mean_suboptimality,min_suboptimality,max_suboptimality,envelope"
    );
    assert_eq!(json(&dir.join("bounds/bounds.json"))["status"], "ok");
    let spec = json(&dir.join("spectrum/spectrum.json"));
    assert_eq!(spec["rows"].as_array().unwrap().len(), 5);

    run_ok(&["report"], &dir);
    let first = fs::read(dir.join("report.html")).unwrap();
    run_ok(&["report"], &dir);
    assert_eq!(first, fs::read(dir.join("report.html")).unwrap());
    let html = String::from_utf8(first).unwrap();
    for title in ["Training", "radial rays", "two-dimensional slice", "Hessian spectrum", "Envelope", "PAC-Bayes"] {
        assert!(html.contains(title), "report lacks {title}");
    }
    assert!(html.matches("<svg").count() >= 7);
}

#[test]
fn report_with_only_training_has_one_section() {
    let dir = scratch("report-train");
    let cfg = config(&dir, "");
    run_ok(&["train", "--config", cfg.to_str().unwrap()], &dir);
    run_ok(&["report"], &dir);
    let html = fs::read_to_string(dir.join("report.html")).unwrap();
    assert_eq!(html.matches("<section>").count(), 1);
    assert!(html.contains("<h2>Training</h2>"));
}

#[test]
fn report_of_an_empty_root_fails() {
    let dir = scratch("report-empty");
    let o = villani(&["report"], &dir);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no results"));
}

#[test]
fn out_env_sets_the_root() {
    let dir = scratch("env");
    let cfg = write_config(&dir, &with("train", "steps = 0").replace("steps = 40\n", ""));
    let o = Command::new(env!("CARGO_BIN_EXE_villani"))
        .args(["train", "--quiet", "--config", cfg.to_str().unwrap()])
        .env("VILLANI_OUT", dir.join("from-env"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.join("from-env/train/manifest.json").exists());
}

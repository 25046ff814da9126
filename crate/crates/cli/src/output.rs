//! Output directories, the per-directory lock and hash-stamped writers.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const LOCK_FILE: &str = ".villani.lock";
pub const RESOLVED_CONFIG: &str = "config.resolved.toml";
pub const HASH_PREFIX: &str = "# config_hash=";

/// Removes the lock file when dropped.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::runtime(format!(
                "{} is locked by another invocation (remove {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A locked output directory stamped with the resolved config.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub hash: String,
    _lock: DirLock,
}

impl RunDir {
    pub fn create(path: PathBuf, cfg: &ExperimentConfig) -> CliResult<Self> {
        fs::create_dir_all(&path)
            .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", path.display())))?;
        let lock = DirLock::acquire(&path)?;
        let hash = cfg.hash();
        fs::write(
            path.join(RESOLVED_CONFIG),
            format!("{HASH_PREFIX}{hash}\n{}", cfg.to_toml()),
        )?;
        Ok(RunDir {
            path,
            hash,
            _lock: lock,
        })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// CSV whose first line is the config-hash comment.
    pub fn write_csv(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<PathBuf> {
        let path = self.file(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "{HASH_PREFIX}{}", self.hash)?;
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }

    /// Rows serialized with serde under a hash comment.
    pub fn write_rows<T: Serialize>(&self, name: &str, rows: &[T]) -> CliResult<PathBuf> {
        self.write_csv(name, |w| {
            let mut c = csv::Writer::from_writer(w);
            for r in rows {
                c.serialize(r)?;
            }
            c.flush()?;
            Ok(())
        })
    }

    /// Pretty JSON object with a `config_hash` field added.
    pub fn write_json(&self, name: &str, value: &impl Serialize) -> CliResult<PathBuf> {
        let mut v = serde_json::to_value(value)?;
        match v.as_object_mut() {
            Some(obj) => {
                obj.insert("config_hash".into(), self.hash.clone().into());
            }
            None => v = serde_json::json!({ "config_hash": self.hash, "value": v }),
        }
        let path = self.file(name);
        fs::write(&path, serde_json::to_string_pretty(&v)? + "\n")?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> CliResult<PathBuf> {
        let path = self.file(name);
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Reads a CSV written by [`RunDir::write_csv`], skipping the hash comment.
pub fn read_rows<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// The hash stamped on the first line of a CSV or resolved config.
pub fn stamped_hash(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .next()?
        .strip_prefix(HASH_PREFIX)
        .map(str::to_string)
}

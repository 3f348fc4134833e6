//! Run directories: `<root>/<run-id>/` holding the resolved config, a
//! JSON-lines metrics stream, a CSV summary, checkpoints and profiles.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use svformer_core::Result;

use crate::config::RunConfig;

pub const OUT_ENV: &str = "SVFORMER_OUT";

/// Output root: `$SVFORMER_OUT` if set, else `out`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| "out".into())
}

/// `config.run_id` if set, else `<command>-<variant>-s<seed>-<digest>` with
/// the first 8 hex digits of the resolved config's hash.
pub fn run_id(command: &str, cfg: &RunConfig) -> String {
    if !cfg.run_id.is_empty() {
        return cfg.run_id.clone();
    }
    let digest = Sha256::digest(cfg.to_toml().as_bytes());
    let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{command}-{}-s{}-{hex}", cfg.variant, cfg.seed)
}

pub struct RunDir {
    pub path: PathBuf,
    metrics: BufWriter<File>,
}

impl RunDir {
    /// Creates (or truncates) the run directory and writes `config.resolved`.
    pub fn create(root: &Path, command: &str, cfg: &RunConfig) -> Result<Self> {
        let path = root.join(run_id(command, cfg));
        std::fs::create_dir_all(&path)?;
        std::fs::write(path.join("config.resolved"), cfg.to_toml())?;
        let metrics = BufWriter::new(File::create(path.join("metrics.jsonl"))?);
        Ok(Self { path, metrics })
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf> {
        let p = self.path.join(name);
        std::fs::create_dir_all(&p)?;
        Ok(p)
    }

    /// Appends one record tagged with `"event"` to `metrics.jsonl`.
    pub fn emit<T: Serialize>(&mut self, event: &str, record: &T) -> Result<()> {
        let mut v = serde_json::to_value(record).expect("record serializes");
        match v.as_object_mut() {
            Some(m) => {
                m.insert("event".into(), event.into());
            }
            None => v = serde_json::json!({ "event": event, "value": v }),
        }
        writeln!(self.metrics, "{v}")?;
        self.metrics.flush()?;
        Ok(())
    }

    pub fn write(&self, rel: &str, contents: &str) -> Result<PathBuf> {
        let p = self.path.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, contents)?;
        Ok(p)
    }
}

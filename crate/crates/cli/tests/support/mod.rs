#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

/// A two-stage model on 16×16 clips that trains in seconds.
pub const SMALL: &str = r#"
[model]
stage_depths = [1, 1]
channels = [8, 16]
time_steps = 4
input_height = 16
input_width = 16

[train]
epochs = 2
warmup_epochs = 1
batch_size = 8

[data]
train_size = 32
test_size = 16
speeds = [2, 5]
blob_sigma = 1.5

[profile]
clips = 8

[gradcheck]
samples = 4
"#;

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub struct Output {
    pub code: i32,
    pub stderr: String,
}

/// Runs the `svformer` binary with its output root at `root`.
pub fn svformer(root: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_svformer"))
        .args(args)
        .env("SVFORMER_OUT", root)
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// The single run directory under `root` whose name starts with `prefix`.
pub fn run_dir(root: &Path, prefix: &str) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(prefix))
        .collect();
    assert_eq!(dirs.len(), 1, "run dirs for {prefix}: {dirs:?}");
    dirs.pop().unwrap()
}

pub fn metrics(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}"));
            assert!(v.is_object(), "{l}");
            v
        })
        .collect()
}

/// Metric records with wall-clock fields removed.
pub fn timeless(records: &[Value]) -> Vec<Value> {
    records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            r.as_object_mut().unwrap().remove("wall_time_s");
            r
        })
        .collect()
}

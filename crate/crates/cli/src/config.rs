//! Run configuration: a TOML document plus `key.path=value` overrides,
//! checked against the schema of the defaults before deserialization so
//! unknown keys and type errors are reported with their full key path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use svformer_core::data::PatternConfig;
use svformer_core::energy::EnergyModel;
use svformer_core::model::{ModelConfig, NamedVariant};
use svformer_core::train::TrainConfig;
use svformer_core::{Error, Result};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset files; empty means generate from `pattern`.
    pub train_path: String,
    pub test_path: String,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    /// Blob speeds in pixels per frame; clip geometry follows the model.
    pub speeds: Vec<u64>,
    pub blob_sigma: f64,
    /// Independent frame permutations averaged in frame-shuffled evaluation.
    pub shuffle_repeats: usize,
}

impl DataConfig {
    pub fn pattern(&self, model: &ModelConfig) -> PatternConfig {
        PatternConfig {
            num_classes: model.num_classes,
            time_steps: model.time_steps,
            height: model.input_height,
            width: model.input_width,
            channels: model.input_channels,
            speeds: self.speeds.clone(),
            blob_sigma: self.blob_sigma,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_path: String::new(),
            test_path: String::new(),
            seed: 0,
            train_size: 512,
            test_size: 128,
            speeds: PatternConfig::default().speeds,
            blob_sigma: PatternConfig::default().blob_sigma,
            shuffle_repeats: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub gaussian_levels: Vec<f64>,
    pub salt_pepper: Vec<f64>,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            gaussian_levels: vec![0.0, 0.1, 0.5, 1.0],
            salt_pepper: vec![0.0, 0.1, 0.2, 0.3],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    /// Test clips pushed through the instrumented model.
    pub clips: usize,
    /// Also count exact accumulate events (slower).
    pub exact: bool,
    /// Skip the model and bill the aggregate counts below.
    pub aggregate: bool,
    pub flops_mac: f64,
    pub sops: f64,
    pub ann_flops: f64,
    pub energy: EnergyModel,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            clips: 32,
            exact: true,
            aggregate: false,
            flops_mac: 0.0,
            sops: 0.0,
            ann_flops: 0.0,
            energy: EnergyModel::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub step: f64,
    pub model_step: f64,
    pub tol: f64,
    pub samples: usize,
    pub batch: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-4,
            model_step: 1e-6,
            tol: 1e-4,
            samples: 16,
            batch: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model init, batch order and gradient-check probes; datasets use
    /// `data.seed`.
    pub seed: u64,
    /// Named model preset; the `model` table overrides individual fields.
    pub variant: String,
    /// Output directory name under the output root; empty derives one from
    /// the command and seed.
    pub run_id: String,
    /// Checkpoint consumed by eval, profile and noise-eval.
    pub checkpoint: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub noise: NoiseConfig,
    pub profile: ProfileConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            variant: "tiny".into(),
            run_id: String::new(),
            checkpoint: String::new(),
            model: ModelConfig::tiny(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            noise: NoiseConfig::default(),
            profile: ProfileConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

/// Keys that are valid but absent from the serialized defaults.
const OPTIONAL_KEYS: &[(&str, &str)] = &[("model.local_stages", "integer")];

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.train_path.is_empty() || self.data.test_path.is_empty() {
            self.data.pattern(&self.model).classes()?;
        }
        if self.data.shuffle_repeats == 0 {
            return Err(Error::Config("data.shuffle_repeats must be >= 1".into()));
        }
        for &a in &self.noise.gaussian_levels {
            svformer_core::NoiseSpec::Gaussian { level: a, seed: 0 }.validate()?;
        }
        for &p in &self.noise.salt_pepper {
            svformer_core::NoiseSpec::SaltPepper { p, seed: 0 }.validate()?;
        }
        if self.gradcheck.step <= 0.0 || self.gradcheck.model_step <= 0.0 || self.gradcheck.tol <= 0.0 {
            return Err(Error::Config("gradcheck.step, model_step and tol must be > 0".into()));
        }
        Ok(())
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::String(_) => "string",
        Value::Integer(_) => "integer",
        Value::Float(_) => "float",
        Value::Boolean(_) => "boolean",
        Value::Datetime(_) => "datetime",
        Value::Array(_) => "array",
        Value::Table(_) => "table",
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Checks `user` against `schema`, widening integers to floats where a
/// float is expected.
fn check(user: &mut Table, schema: &Table, prefix: &str) -> Result<()> {
    for (key, value) in user.iter_mut() {
        let path = join(prefix, key);
        let Some(expected) = schema.get(key) else {
            if let Some((_, ty)) = OPTIONAL_KEYS.iter().find(|(p, _)| *p == path) {
                if type_name(value) != *ty {
                    return Err(Error::Config(format!(
                        "{path}: expected {ty}, found {}",
                        type_name(value)
                    )));
                }
                continue;
            }
            let mut candidates: Vec<String> = schema.keys().cloned().collect();
            candidates.extend(
                OPTIONAL_KEYS
                    .iter()
                    .filter_map(|(p, _)| p.strip_prefix(&format!("{prefix}.")).map(str::to_string))
                    .filter(|k| !k.contains('.')),
            );
            let nearest = candidates
                .iter()
                .min_by_key(|c| strsim::levenshtein(c, key))
                .map(|c| format!("; did you mean `{}`?", join(prefix, c)))
                .unwrap_or_default();
            return Err(Error::Config(format!("unknown key `{path}`{nearest}")));
        };
        match (expected, &mut *value) {
            (Value::Float(_), Value::Integer(i)) => *value = Value::Float(*i as f64),
            (Value::Table(s), Value::Table(u)) => check(u, s, &path)?,
            (Value::Array(s), Value::Array(u)) => {
                if let Some(first) = s.first() {
                    for (i, item) in u.iter_mut().enumerate() {
                        match (first, &mut *item) {
                            (Value::Float(_), Value::Integer(n)) => *item = Value::Float(*n as f64),
                            (f, it) if type_name(f) != type_name(it) => {
                                return Err(Error::Config(format!(
                                    "{path}[{i}]: expected {}, found {}",
                                    type_name(f),
                                    type_name(it)
                                )))
                            }
                            _ => {}
                        }
                    }
                }
            }
            (e, v) if type_name(e) != type_name(v) => {
                return Err(Error::Config(format!(
                    "{path}: expected {}, found {}",
                    type_name(e),
                    type_name(v)
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Parses a `key.path=value` override. Values are read as TOML literals,
/// falling back to a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{s}` is not of the form key=value")))?;
    let path: Vec<String> = k.trim().split('.').map(str::to_string).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{s}` has an empty key segment")));
    }
    let v = v.trim();
    let value = toml::from_str::<Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((path, value))
}

fn set_path(root: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut t = root;
    for (i, p) in parents.iter().enumerate() {
        let entry = t.entry(p.clone()).or_insert_with(|| Value::Table(Table::new()));
        t = match entry {
            Value::Table(t) => t,
            other => {
                return Err(Error::Config(format!(
                    "{}: expected table, found {}",
                    path[..=i].join("."),
                    type_name(other)
                )))
            }
        };
    }
    t.insert(last.clone(), value);
    Ok(())
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Resolves a configuration document (possibly empty) plus overrides.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut user: Table = toml::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut user, &path, value)?;
    }
    let schema = match Value::try_from(RunConfig::default()).expect("defaults serialize") {
        Value::Table(t) => t,
        _ => unreachable!(),
    };
    if let Some(Value::Table(t)) = user.get("train") {
        if t.contains_key("seed") {
            return Err(Error::Config("unknown key `train.seed`; did you mean `seed`?".into()));
        }
    }
    check(&mut user, &schema, "")?;

    let variant_name = match user.get("variant") {
        Some(Value::String(s)) => s.clone(),
        _ => "tiny".into(),
    };
    let variant = NamedVariant::parse(&variant_name).ok_or_else(|| {
        let names: Vec<&str> = NamedVariant::ALL.iter().map(|v| v.name()).collect();
        Error::Config(format!("variant: unknown variant `{variant_name}` (one of {})", names.join(", ")))
    })?;
    let mut model = match Value::try_from(variant.config()).expect("model config serializes") {
        Value::Table(t) => t,
        _ => unreachable!(),
    };
    if let Some(Value::Table(m)) = user.remove("model") {
        merge(&mut model, m);
    }
    user.insert("model".into(), Value::Table(model));
    let mut cfg: RunConfig = Value::Table(user)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
    cfg.train.seed = cfg.seed;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_config(&text, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_tiny_defaults() {
        let c = parse_config("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model, ModelConfig::tiny());
    }

    #[test]
    fn override_beats_file() {
        let c = parse_config("[train]\nepochs = 5\n", &["train.epochs=7".into()]).unwrap();
        assert_eq!(c.train.epochs, 7);
    }

    #[test]
    fn misspelled_key_names_nearest() {
        let e = parse_config("[model]\nchanels = [1]\n", &[]).unwrap_err().to_string();
        assert!(e.contains("model.chanels") && e.contains("model.channels"), "{e}");
        let e = parse_config("", &["train.epoch=3".into()]).unwrap_err().to_string();
        assert!(e.contains("train.epochs"), "{e}");
    }

    #[test]
    fn type_errors_report_path() {
        let e = parse_config("[model]\ntime_steps = \"eight\"\n", &[]).unwrap_err().to_string();
        assert!(e.contains("model.time_steps") && e.contains("integer"), "{e}");
    }

    #[test]
    fn integers_widen_to_floats() {
        let c = parse_config("[train]\nbase_lr = 1\n", &[]).unwrap();
        assert_eq!(c.train.base_lr, 1.0);
    }

    #[test]
    fn variant_then_model_overrides() {
        let c = parse_config("variant = \"3stg\"\n[model]\ntime_steps = 4\n", &["model.num_classes=8".into()]).unwrap();
        assert_eq!(c.model.stage_depths, vec![1, 2, 1]);
        assert_eq!(c.model.time_steps, 4);
        assert!(!c.model.use_local_pathway);
    }

    #[test]
    fn optional_key_accepted() {
        let c = parse_config("", &["model.local_stages=1".into()]).unwrap();
        assert_eq!(c.model.local_stages, Some(1));
    }

    #[test]
    fn resolved_round_trips() {
        let c = parse_config("seed = 3\n", &["model.norm_mode=plain_bn".into()]).unwrap();
        let again = parse_config(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, again);
    }
}

//! Checkpoint container: magic, format version, config digest and JSON,
//! a named parameter table of little-endian f32 tensors, and a SHA-256
//! checksum over everything before it.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::Reader;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"SVFCKPT\0";
pub const VERSION: u32 = 1;

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let mut b = Vec::new();
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&VERSION.to_le_bytes());
    b.extend_from_slice(&model.cfg.digest());
    let cfg = serde_json::to_vec(&model.cfg).expect("config serializes");
    b.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    b.extend_from_slice(&cfg);
    let entries = model.store.entries();
    b.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        b.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        b.extend_from_slice(e.name.as_bytes());
        b.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            b.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in e.tensor.data() {
            b.extend_from_slice(&v.to_le_bytes());
        }
    }
    let sum = Sha256::digest(&b);
    b.extend_from_slice(&sum);
    b
}

pub fn save(model: &Model<f32>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

struct Decoded {
    cfg: ModelConfig,
    digest: [u8; 32],
    table: Vec<(String, Tensor<f32>)>,
}

fn decode(bytes: &[u8], path: &Path) -> Result<Decoded> {
    let fail = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("not a checkpoint file".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader::new(&body[MAGIC.len()..]);
    let version = r.u32().ok_or_else(|| fail("truncated header".into()))?;
    if version != VERSION {
        return Err(fail(format!("unsupported checkpoint version {version} (expected {VERSION})")));
    }
    if Sha256::digest(body).as_slice() != sum {
        return Err(fail("checksum mismatch (corrupt or truncated file)".into()));
    }
    let truncated = || fail("truncated parameter table".into());
    let digest: [u8; 32] = r.bytes(32).ok_or_else(truncated)?.try_into().unwrap();
    let clen = r.u64().ok_or_else(truncated)? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.bytes(clen).ok_or_else(truncated)?)
        .map_err(|e| fail(format!("bad embedded config: {e}")))?;
    let n = r.u32().ok_or_else(truncated)? as usize;
    let mut table = Vec::with_capacity(n);
    for _ in 0..n {
        let len = r.u32().ok_or_else(truncated)? as usize;
        let name = String::from_utf8(r.bytes(len).ok_or_else(truncated)?.to_vec())
            .map_err(|_| fail("parameter name is not UTF-8".into()))?;
        let rank = r.u32().ok_or_else(truncated)? as usize;
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Option<_>>()
            .ok_or_else(truncated)?;
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = (0..numel)
            .map(|_| r.u32().map(f32::from_bits))
            .collect::<Option<_>>()
            .ok_or_else(truncated)?;
        let t = Tensor::new(&shape, data).map_err(|e| fail(format!("{name}: {e}")))?;
        table.push((name, t));
    }
    if !r.is_empty() {
        return Err(fail("trailing bytes after parameter table".into()));
    }
    Ok(Decoded { cfg, digest, table })
}

/// Copies a parameter table into `store`, failing with a per-name diff if
/// the names or shapes differ.
fn install(store: &mut ParamStore<f32>, table: Vec<(String, Tensor<f32>)>) -> Result<()> {
    let mut diff = Vec::new();
    for (name, t) in &table {
        match store.find(name) {
            None => diff.push(format!("unexpected {name}")),
            Some(id) if store.get(id).shape() != t.shape() => diff.push(format!(
                "{name}: shape {:?} in file, {:?} in model",
                t.shape(),
                store.get(id).shape()
            )),
            Some(_) => {}
        }
    }
    for e in store.entries() {
        if !table.iter().any(|(n, _)| *n == e.name) {
            diff.push(format!("missing {}", e.name));
        }
    }
    if !diff.is_empty() {
        return Err(Error::ParamMismatch(diff.join("; ")));
    }
    for (name, t) in table {
        let id = store.find(&name).expect("checked above");
        *store.get_mut(id) = t;
    }
    Ok(())
}

/// Rebuilds the model stored in a checkpoint.
pub fn load(path: &Path) -> Result<Model<f32>> {
    let d = decode(&crate::error::read_file(path)?, path)?;
    if d.cfg.digest() != d.digest {
        return Err(Error::Format {
            path: path.to_path_buf(),
            msg: "config digest does not match embedded config".into(),
        });
    }
    let mut model = Model::new(&d.cfg, 0)?;
    install(&mut model.store, d.table)?;
    Ok(model)
}

/// Loads parameters into an existing model of a possibly different config.
pub fn load_into(model: &mut Model<f32>, path: &Path) -> Result<()> {
    let d = decode(&crate::error::read_file(path)?, path)?;
    install(&mut model.store, d.table)?;
    model.reset();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(&ModelConfig::tiny(), 5).unwrap();
        save(&m, &p).unwrap();
        let l = load(&p).unwrap();
        assert_eq!(l.cfg, m.cfg);
        for (a, b) in m.store.entries().iter().zip(l.store.entries()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.tensor, b.tensor);
        }
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Model::<f32>::new(&ModelConfig::tiny(), 5).unwrap();
        let mut bytes = encode(&m);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load(&p), Err(Error::Format { .. })));
        std::fs::write(&p, &encode(&m)[..mid]).unwrap();
        assert!(matches!(load(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn mismatched_config_names_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&Model::<f32>::new(&ModelConfig::tiny(), 0).unwrap(), &p).unwrap();
        let cfg = ModelConfig {
            use_local_pathway: false,
            ..ModelConfig::tiny()
        };
        let mut other = Model::<f32>::new(&cfg, 0).unwrap();
        let err = load_into(&mut other, &p).unwrap_err().to_string();
        assert!(err.contains("lp.dw.weight"), "{err}");
        assert!(err.contains("head.pool.weight"), "{err}");
    }
}

//! Synthetic moving-pattern clips, noise corruptions and the dataset
//! container format.
//!
//! Each class is a blob translating along one axis with a signed speed on a
//! toroidal frame. With the default geometry (32 px, 8 frames, speeds 4 and
//! 12) both speeds visit the same set of positions along an axis, so the
//! class can only be read from the order of the frames.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

/// One motion category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDef {
    pub axis: Axis,
    /// Signed displacement in pixels per frame.
    pub velocity: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub num_classes: usize,
    pub time_steps: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Speeds in pixels per frame; classes enumerate speed × axis × sign.
    pub speeds: Vec<u64>,
    pub blob_sigma: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            num_classes: 8,
            time_steps: 8,
            height: 32,
            width: 32,
            channels: 3,
            speeds: vec![4, 12],
            blob_sigma: 2.0,
        }
    }
}

impl PatternConfig {
    pub fn classes(&self) -> Result<Vec<ClassDef>> {
        let mut all = Vec::new();
        for &s in &self.speeds {
            for axis in [Axis::X, Axis::Y] {
                for sign in [1i64, -1] {
                    all.push(ClassDef {
                        axis,
                        velocity: sign * s as i64,
                    });
                }
            }
        }
        if self.num_classes == 0 || self.num_classes > all.len() {
            return Err(Error::Config(format!(
                "num_classes = {} but only {} direction x speed combinations exist",
                self.num_classes,
                all.len()
            )));
        }
        all.truncate(self.num_classes);
        Ok(all)
    }

    fn validate(&self) -> Result<()> {
        if self.time_steps < 2 {
            return Err(Error::Config("clips need time_steps >= 2".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("clips need at least one channel".into()));
        }
        if !(self.blob_sigma > 0.0) {
            return Err(Error::Config("data.blob_sigma must be > 0".into()));
        }
        let extent = (6.0 * self.blob_sigma).ceil() as usize;
        if extent > self.height.min(self.width) {
            return Err(Error::Config(format!(
                "blob of extent {extent} px does not fit a {}x{} frame",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipDataset {
    /// `[num, T, C, H, W]`, values in `[0, 1]`.
    pub clips: Tensor<f32>,
    pub labels: Vec<usize>,
    pub seed: u64,
    pub classes: Vec<ClassDef>,
}

impl ClipDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// `[T, C, H, W]`.
    pub fn clip_shape(&self) -> &[usize] {
        &self.clips.shape()[1..]
    }

    fn clip_len(&self) -> usize {
        self.clip_shape().iter().product()
    }

    pub fn clip(&self, i: usize) -> &[f32] {
        let n = self.clip_len();
        &self.clips.data()[i * n..][..n]
    }

    /// Gathers clips into the model layout `[T, B, C, H, W]`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let s = self.clip_shape();
        let (t, frame) = (s[0], s[1] * s[2] * s[3]);
        let b = indices.len();
        let mut data = vec![0.0f32; t * b * frame];
        for (bi, &i) in indices.iter().enumerate() {
            let c = self.clip(i);
            for ti in 0..t {
                data[(ti * b + bi) * frame..][..frame].copy_from_slice(&c[ti * frame..][..frame]);
            }
        }
        let shape = [t, b, s[1], s[2], s[3]];
        (
            Tensor::from_vec(&shape, data),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The first `n` clips (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> ClipDataset {
        let n = n.min(self.len());
        let mut shape = self.clips.shape().to_vec();
        shape[0] = n;
        ClipDataset {
            clips: Tensor::from_vec(&shape, self.clips.data()[..n * self.clip_len()].to_vec()),
            labels: self.labels[..n].to_vec(),
            seed: self.seed,
            classes: self.classes.clone(),
        }
    }

    /// Applies `f(clip_index, clip)` to every clip.
    pub fn map_clips(&self, f: impl Fn(usize, &[f32]) -> Vec<f32>) -> ClipDataset {
        let mut data = Vec::with_capacity(self.clips.numel());
        for i in 0..self.len() {
            data.extend(f(i, self.clip(i)));
        }
        ClipDataset {
            clips: Tensor::from_vec(self.clips.shape(), data),
            ..self.clone()
        }
    }

    /// Randomly permutes the frame order of every clip.
    pub fn shuffle_frames(&self, seed: u64) -> ClipDataset {
        let s = self.clip_shape().to_vec();
        let frame = s[1] * s[2] * s[3];
        self.map_clips(|i, c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut order: Vec<usize> = (0..s[0]).collect();
            order.shuffle(&mut rng);
            order.iter().flat_map(|&t| c[t * frame..][..frame].iter().copied()).collect()
        })
    }

    /// Mirrors every clip horizontally and relabels x-axis motions.
    pub fn hflip(&self) -> ClipDataset {
        let s = self.clip_shape().to_vec();
        let w = s[3];
        let mut out = self.map_clips(|_, c| {
            let mut d = c.to_vec();
            for row in d.chunks_mut(w) {
                row.reverse();
            }
            d
        });
        out.labels = self
            .labels
            .iter()
            .map(|&l| {
                let c = &self.classes[l];
                if c.axis != Axis::X {
                    return l;
                }
                self.classes
                    .iter()
                    .position(|d| d.axis == Axis::X && d.velocity == -c.velocity)
                    .unwrap_or(l)
            })
            .collect();
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = Vec::new();
        body.extend_from_slice(DATASET_MAGIC);
        body.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        body.extend_from_slice(&(self.clips.rank() as u32).to_le_bytes());
        for &d in self.clips.shape() {
            body.extend_from_slice(&(d as u64).to_le_bytes());
        }
        body.extend_from_slice(&self.seed.to_le_bytes());
        let defs = serde_json::to_vec(&self.classes).expect("class definitions serialize");
        body.extend_from_slice(&(defs.len() as u64).to_le_bytes());
        body.extend_from_slice(&defs);
        for &v in self.clips.data() {
            body.extend_from_slice(&v.to_le_bytes());
        }
        for &l in &self.labels {
            body.extend_from_slice(&(l as u32).to_le_bytes());
        }
        let sum = Sha256::digest(&body);
        body.extend_from_slice(&sum);
        let mut f = std::fs::File::create(path)?;
        f.write_all(&body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ClipDataset> {
        let bytes = crate::error::read_file(path)?;
        let fail = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            msg: msg.to_string(),
        };
        if bytes.len() < DATASET_MAGIC.len() + 4 + 32 || &bytes[..DATASET_MAGIC.len()] != DATASET_MAGIC {
            return Err(fail("not a clip dataset file"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader::new(&body[DATASET_MAGIC.len()..]);
        let version = r.u32().ok_or_else(|| fail("truncated header"))?;
        if version != DATASET_VERSION {
            return Err(fail(&format!(
                "unsupported format version {version} (expected {DATASET_VERSION})"
            )));
        }
        if Sha256::digest(body).as_slice() != sum {
            return Err(fail("checksum mismatch (corrupt or truncated file)"));
        }
        let rank = r.u32().ok_or_else(|| fail("truncated header"))? as usize;
        if rank != 5 {
            return Err(fail("clip tensor must have rank 5"));
        }
        let shape: Vec<usize> = (0..rank)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Option<_>>()
            .ok_or_else(|| fail("truncated header"))?;
        let seed = r.u64().ok_or_else(|| fail("truncated header"))?;
        let dlen = r.u64().ok_or_else(|| fail("truncated header"))? as usize;
        let defs = r.bytes(dlen).ok_or_else(|| fail("truncated class definitions"))?;
        let classes: Vec<ClassDef> =
            serde_json::from_slice(defs).map_err(|e| fail(&format!("bad class definitions: {e}")))?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| r.u32().map(f32::from_bits))
            .collect::<Option<Vec<f32>>>()
            .ok_or_else(|| fail("truncated clip data"))?;
        let labels = (0..shape[0])
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Option<Vec<usize>>>()
            .ok_or_else(|| fail("truncated labels"))?;
        if !r.is_empty() {
            return Err(fail("trailing bytes after labels"));
        }
        if labels.iter().any(|&l| l >= classes.len()) {
            return Err(fail("label out of range"));
        }
        Ok(ClipDataset {
            clips: Tensor::new(&shape, data).map_err(|e| fail(&e.to_string()))?,
            labels,
            seed,
            classes,
        })
    }
}

const DATASET_MAGIC: &[u8; 8] = b"SVFCLIPS";
const DATASET_VERSION: u32 = 1;

/// Little-endian cursor over a byte slice.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.buf.len() < n {
            return None;
        }
        let (a, b) = self.buf.split_at(n);
        self.buf = b;
        Some(a)
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.bytes(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

/// Balanced set of `num` clips (labels cycle through the classes).
pub fn gen_moving_patterns(seed: u64, cfg: &PatternConfig, num: usize) -> Result<ClipDataset> {
    cfg.validate()?;
    let classes = cfg.classes()?;
    if num == 0 {
        return Err(Error::Config("dataset size must be >= 1".into()));
    }
    let (t, c, h, w) = (cfg.time_steps, cfg.channels, cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..num).map(|i| i % classes.len()).collect();
    labels.shuffle(&mut rng);
    let frame = c * h * w;
    let mut data = vec![0.0f32; num * t * frame];
    let two_s2 = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
    for (i, &label) in labels.iter().enumerate() {
        let class = &classes[label];
        let y0 = rng.random_range(0.0..h as f64);
        let x0 = rng.random_range(0.0..w as f64);
        let colour: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.0)).collect();
        for ti in 0..t {
            let shift = class.velocity as f64 * ti as f64;
            let (cy, cx) = match class.axis {
                Axis::X => (y0, (x0 + shift).rem_euclid(w as f64)),
                Axis::Y => ((y0 + shift).rem_euclid(h as f64), x0),
            };
            let base = (i * t + ti) * frame;
            for yy in 0..h {
                let dy = torus_dist(yy as f64, cy, h as f64);
                for xx in 0..w {
                    let dx = torus_dist(xx as f64, cx, w as f64);
                    let v = (-(dy * dy + dx * dx) / two_s2).exp();
                    for (ci, col) in colour.iter().enumerate() {
                        data[base + (ci * h + yy) * w + xx] = (v * col) as f32;
                    }
                }
            }
        }
    }
    Ok(ClipDataset {
        clips: Tensor::from_vec(&[num, t, c, h, w], data),
        labels,
        seed,
        classes,
    })
}

fn torus_dist(a: f64, b: f64, n: f64) -> f64 {
    let d = (a - b).abs() % n;
    d.min(n - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Zero-mean noise with std `level` × the frame's own std.
    Gaussian { level: f64, seed: u64 },
    /// Each pixel becomes the frame's max or min with probability `p`.
    SaltPepper { p: f64, seed: u64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gaussian { level, .. } if !(level >= 0.0 && level.is_finite()) => {
                Err(Error::Config(format!("gaussian noise level must be >= 0, got {level}")))
            }
            NoiseSpec::SaltPepper { p, .. } if !(0.0..=1.0).contains(&p) => {
                Err(Error::Config(format!("salt-and-pepper probability must be in [0, 1], got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, ds: &ClipDataset) -> Result<ClipDataset> {
        self.validate()?;
        let s = ds.clip_shape().to_vec();
        let frame = s[1] * s[2] * s[3];
        let spatial = s[2] * s[3];
        Ok(match *self {
            NoiseSpec::Gaussian { level, seed } => ds.map_clips(|i, c| {
                let mut out = c.to_vec();
                for (t, f) in out.chunks_mut(frame).enumerate() {
                    add_gaussian_noise(f, level, frame_seed(seed, i, t));
                }
                out
            }),
            NoiseSpec::SaltPepper { p, seed } => ds.map_clips(|i, c| {
                let mut out = c.to_vec();
                for (t, f) in out.chunks_mut(frame).enumerate() {
                    add_salt_pepper(f, spatial, p, frame_seed(seed, i, t));
                }
                out
            }),
        })
    }
}

fn frame_seed(seed: u64, clip: usize, t: usize) -> u64 {
    seed ^ ((clip as u64) << 20 | t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Adds `N(0, (a·σ_ori)²)` to one frame in place (σ_ori is the frame's
/// population std) and clamps to `[0, 1]`.
pub fn add_gaussian_noise(frame: &mut [f32], a: f64, seed: u64) {
    let n = frame.len() as f64;
    let mean = frame.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = frame.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = a * var.sqrt();
    if std == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in frame.iter_mut() {
        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
    }
}

/// Replaces each pixel (all channels at one location of a `[C, H*W]`
/// frame) with probability `p` by the frame max or min, with equal odds.
pub fn add_salt_pepper(frame: &mut [f32], spatial: usize, p: f64, seed: u64) {
    if p == 0.0 {
        return;
    }
    let hi = frame.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lo = frame.iter().copied().fold(f32::INFINITY, f32::min);
    let channels = frame.len() / spatial;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for px in 0..spatial {
        if rng.random::<f64>() < p {
            let v = if rng.random::<bool>() { hi } else { lo };
            for c in 0..channels {
                frame[c * spatial + px] = v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let cfg = PatternConfig::default();
        let a = gen_moving_patterns(3, &cfg, 16).unwrap();
        let b = gen_moving_patterns(3, &cfg, 16).unwrap();
        assert_eq!(a, b);
        let c = gen_moving_patterns(4, &cfg, 16).unwrap();
        assert_ne!(a.clips, c.clips);
    }

    #[test]
    fn balanced_and_in_range() {
        let ds = gen_moving_patterns(0, &PatternConfig::default(), 40).unwrap();
        for k in 0..8 {
            assert_eq!(ds.labels.iter().filter(|&&l| l == k).count(), 5);
        }
        assert!(ds.clips.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn too_many_classes_rejected() {
        let cfg = PatternConfig {
            num_classes: 9,
            ..Default::default()
        };
        assert!(gen_moving_patterns(0, &cfg, 9).is_err());
    }

    #[test]
    fn oversized_blob_rejected() {
        let cfg = PatternConfig {
            blob_sigma: 10.0,
            ..Default::default()
        };
        assert!(gen_moving_patterns(0, &cfg, 8).is_err());
    }

    #[test]
    fn batch_layout_is_time_major() {
        let ds = gen_moving_patterns(0, &PatternConfig::default(), 4).unwrap();
        let (x, labels) = ds.batch(&[2, 0]);
        assert_eq!(x.shape(), &[8, 2, 3, 32, 32]);
        assert_eq!(labels, vec![ds.labels[2], ds.labels[0]]);
        let frame = 3 * 32 * 32;
        // step 1, batch entry 0 is frame 1 of clip 2
        assert_eq!(&x.data()[(2) * frame..][..frame], &ds.clip(2)[frame..2 * frame]);
    }

    #[test]
    fn hflip_relabels_x_motion() {
        let ds = gen_moving_patterns(0, &PatternConfig::default(), 8).unwrap();
        let f = ds.hflip();
        for (i, &l) in ds.labels.iter().enumerate() {
            let (a, b) = (&ds.classes[l], &ds.classes[f.labels[i]]);
            match a.axis {
                Axis::X => assert_eq!(a.velocity, -b.velocity),
                Axis::Y => assert_eq!(a, b),
            }
        }
        assert_eq!(f.hflip(), ds);
    }
}

//! Training by backpropagation through time with surrogate gradients:
//! AdamW with decoupled weight decay, warmup + cosine schedule, global-norm
//! clipping and the evaluation loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::data::ClipDataset;
use crate::error::{Error, Result};
use crate::model::{Mode, Model};
use crate::params::{ParamKind, ParamStore};
use crate::probe::Probe;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    #[serde(skip)]
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_clip: f64,
    /// Random horizontal flips (x-axis motion labels are mirrored).
    pub hflip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            base_lr: 1e-3,
            warmup_epochs: 3,
            weight_decay: 1e-2,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 5.0,
            hflip: false,
        }
    }
}

impl TrainConfig {
    /// Full-dataset settings (600 epochs, lr 0.006, batch 64).
    pub fn full_scale() -> Self {
        Self {
            epochs: 600,
            batch_size: 64,
            base_lr: 0.006,
            warmup_epochs: 20,
            weight_decay: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.base_lr > 0.0) {
            return err("train.base_lr must be > 0");
        }
        if self.epochs == 0 {
            return err("train.epochs must be >= 1");
        }
        if self.warmup_epochs >= self.epochs {
            return err("train.warmup_epochs must be < train.epochs");
        }
        if self.batch_size == 0 {
            return err("train.batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return err("train.beta1 and train.beta2 must be in [0, 1)");
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 || !(self.grad_clip > 0.0) {
            return err("train.eps and train.grad_clip must be > 0, train.weight_decay >= 0");
        }
        Ok(())
    }
}

/// Per-step linear warmup followed by half-cosine decay to zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        Self {
            base_lr: cfg.base_lr,
            warmup_steps: cfg.warmup_epochs * steps_per_epoch,
            total_steps: cfg.epochs * steps_per_epoch,
        }
    }

    /// Learning rate of optimizer step `step` (0-based).
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps).max(1) as f64;
        let p = ((step - self.warmup_steps) as f64 / span).min(1.0);
        0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * p).cos())
    }
}

/// Adaptive-moment optimizer with decoupled weight decay applied to
/// conv/linear weights only.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    /// `grads[i]` belongs to the i-th store entry (`None` for buffers or
    /// parameters that received no gradient).
    pub fn step<S: Scalar>(&mut self, store: &mut ParamStore<S>, grads: &[Option<Vec<f64>>], lr: f64) {
        let entries = store.entries_mut();
        if self.m.is_empty() {
            self.m = entries.iter().map(|e| vec![0.0; e.tensor.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, e) in entries.iter_mut().enumerate() {
            if !e.trainable() {
                continue;
            }
            let Some(g) = &grads[i] else { continue };
            let decay = if e.kind == ParamKind::Weight {
                lr * self.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in e.tensor.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                let mut x = p.as_f64();
                x -= decay * x;
                x -= lr * mh / (vh.sqrt() + self.eps);
                *p = S::of(x);
            }
        }
    }
}

/// Scales gradients in place so their global L2 norm is at most `max`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Option<Vec<f64>>], max: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let s = max / norm;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, Serialize)]
pub struct LayerStat {
    pub layer: String,
    pub stage: usize,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Metrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_top1: f64,
    pub top1: f64,
    pub lr: f64,
    pub firing_rates: Vec<LayerStat>,
    pub tau: Vec<LayerStat>,
    pub wall_time_s: f64,
}

pub struct StepOutcome {
    pub loss: f64,
    pub correct: usize,
    pub grad_norm: f64,
}

/// One optimizer step on a batch `[T, B, C, H, W]`.
pub fn train_step<S: Scalar>(
    model: &mut Model<S>,
    opt: &mut AdamW,
    clips: &Tensor<S>,
    labels: &[usize],
    lr: f64,
    grad_clip: f64,
) -> Result<StepOutcome> {
    let mut g = Graph::new();
    let params = model.store.bind(&mut g, true);
    let x = g.constant(clips.clone());
    let logits = model.forward_clip(&mut g, &params, x, Mode::TRAIN, None)?;
    let loss = g.cross_entropy(logits, labels)?;
    let loss_v = g.value(loss).item().as_f64();
    if !loss_v.is_finite() {
        return Err(Error::NonFinite(format!(
            "training loss is {loss_v}; {}",
            diagnose(model, clips)
        )));
    }
    let correct = count_correct(g.value(logits), labels);
    g.backward(loss)?;
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; model.store.entries().len()];
    for (id, v) in params.iter() {
        grads[id.index()] = g.grad(v).map(|t| t.data().iter().map(|x| x.as_f64()).collect());
    }
    drop(g);
    let grad_norm = clip_grad_norm(&mut grads, grad_clip);
    if !grad_norm.is_finite() {
        return Err(Error::NonFinite(format!(
            "gradient norm is {grad_norm}; {}",
            diagnose(model, clips)
        )));
    }
    opt.step(&mut model.store, &grads, lr);
    Ok(StepOutcome {
        loss: loss_v,
        correct,
        grad_norm,
    })
}

/// Layer-wise summary used in non-finite diagnostics.
fn diagnose<S: Scalar>(model: &mut Model<S>, clips: &Tensor<S>) -> String {
    let mut parts: Vec<String> = model
        .store
        .entries()
        .iter()
        .filter(|e| !e.tensor.is_finite())
        .map(|e| format!("non-finite parameter {}", e.name))
        .collect();
    let mut probe = Probe::new();
    match model.predict(clips, Some(&mut probe)) {
        Ok(_) => parts.extend(
            probe
                .neurons
                .iter()
                .map(|n| format!("{} fr={:.4}", n.name, n.firing_rate())),
        ),
        Err(e) => parts.push(format!("eval pass failed: {e}")),
    }
    parts.join(", ")
}

pub fn count_correct<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> usize {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count()
}

fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Mutable training state carried across epochs.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub schedule: Schedule,
    pub step: usize,
    steps_per_epoch: usize,
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, train_len: usize) -> Result<Self> {
        cfg.validate()?;
        if train_len == 0 {
            return Err(Error::Config("training set is empty".into()));
        }
        let steps_per_epoch = train_len.div_ceil(cfg.batch_size);
        Ok(Self {
            cfg: cfg.clone(),
            opt: AdamW::new(cfg),
            schedule: Schedule::new(cfg, steps_per_epoch),
            step: 0,
            steps_per_epoch,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    /// One pass over `train` in a seed- and epoch-determined order.
    /// Returns `(mean loss, train accuracy, last lr)`.
    pub fn train_epoch(&mut self, model: &mut Model<f32>, train: &ClipDataset, epoch: usize) -> Result<(f64, f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_mul(1_000_003).wrapping_add(epoch as u64));
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let flipped = self.cfg.hflip.then(|| train.hflip());
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, 0.0);
        for chunk in order.chunks(self.cfg.batch_size) {
            let source = match &flipped {
                Some(f) if rand::Rng::random::<bool>(&mut rng) => f,
                _ => train,
            };
            let (x, labels) = source.batch(chunk);
            lr = self.schedule.lr(self.step);
            let out = train_step(model, &mut self.opt, &x, &labels, lr, self.cfg.grad_clip)?;
            loss_sum += out.loss * chunk.len() as f64;
            correct += out.correct;
            self.step += 1;
        }
        model.reset();
        Ok((
            loss_sum / train.len() as f64,
            correct as f64 / train.len() as f64,
            lr,
        ))
    }
}

/// Top-1 accuracy in evaluation mode. A probe, if given, accumulates
/// spike and operation statistics over the whole set.
pub fn evaluate(model: &mut Model<f32>, data: &ClipDataset, batch: usize, mut probe: Option<&mut Probe>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0;
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = data.batch(chunk);
        let logits = model.predict(&x, probe.as_deref_mut())?;
        correct += count_correct(&logits, &labels);
    }
    model.reset();
    Ok(correct as f64 / data.len() as f64)
}

/// Firing rate and τ of every neuron layer as metric records.
pub fn layer_stats(model: &Model<f32>, probe: &Probe) -> (Vec<LayerStat>, Vec<LayerStat>) {
    let fr = probe
        .neurons
        .iter()
        .map(|n| LayerStat {
            layer: n.name.clone(),
            stage: n.stage,
            value: n.firing_rate(),
        })
        .collect();
    let tau = model
        .taus()
        .into_iter()
        .map(|(layer, stage, value)| LayerStat { layer, stage, value })
        .collect();
    (fr, tau)
}

/// Trains for `cfg.epochs`, evaluating after every epoch; `on_epoch` sees
/// each record as it is produced.
pub fn fit(
    model: &mut Model<f32>,
    train: &ClipDataset,
    test: &ClipDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Metrics, &Model<f32>) -> Result<()>,
) -> Result<Vec<Metrics>> {
    let mut trainer = Trainer::new(cfg, train.len())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (train_loss, train_top1, lr) = trainer.train_epoch(model, train, epoch)?;
        let mut probe = Probe::new();
        let top1 = evaluate(model, test, cfg.batch_size, Some(&mut probe))?;
        let (firing_rates, tau) = layer_stats(model, &probe);
        let m = Metrics {
            epoch,
            train_loss,
            train_top1,
            top1,
            lr,
            firing_rates,
            tau,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&m, model)?;
        history.push(m);
    }
    Ok(history)
}

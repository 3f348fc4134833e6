//! Composite layers: spiking neuron layers, convolution, batch
//! normalization (plain and time-dependent), ConvBN/LinearBN, patch
//! embedding and inference-time Conv-BN fusion.
//!
//! Feature maps flow as `[steps * B, C, *spatial]`, time-major, so every
//! linear layer processes all time steps of a window in one call and only
//! the neuron layers iterate over time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{BnLayout, BnStats, Graph, Var};
use crate::energy;
use crate::error::{Error, Result};
use crate::neuron::{self, NeuronConfig, NeuronKind};
use crate::params::{Bindings, ParamId, ParamKind, ParamStore};
use crate::probe::{OpKind, Probe, SynapseInfo};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Statistics pooled over all time steps and the batch, per channel.
    PlainBn,
    /// Statistics and affine parameters per (time step, channel).
    Tdbn,
}

/// Everything a layer needs during one forward window.
pub struct ForwardCtx<'a, S: Scalar> {
    pub g: &'a mut Graph<S>,
    pub params: &'a Bindings,
    pub store: &'a mut ParamStore<S>,
    pub training: bool,
    /// Use the sigmoid surrogate in the forward pass (gradient checking).
    pub smooth: bool,
    /// Absolute index of the first time step in this window.
    pub t0: usize,
    /// Number of time steps in this window.
    pub steps: usize,
    /// Configured clip length T.
    pub time_steps: usize,
    pub batch: usize,
    pub probe: Option<&'a mut Probe>,
}

impl<S: Scalar> ForwardCtx<'_, S> {
    pub fn full_window(&self) -> bool {
        self.t0 == 0 && self.steps == self.time_steps
    }
}

/// A layer of spiking neurons holding its membrane state between windows.
#[derive(Clone, Debug)]
pub struct SpikingLayer<S: Scalar = f32> {
    pub name: String,
    pub stage: usize,
    pub cfg: NeuronConfig,
    pub a: Option<ParamId>,
    membrane: Option<Vec<S>>,
    t: usize,
}

impl<S: Scalar> SpikingLayer<S> {
    pub fn new(store: &mut ParamStore<S>, name: &str, stage: usize, cfg: &NeuronConfig) -> Self {
        let a = (cfg.kind == NeuronKind::Plif).then(|| {
            store.add(
                format!("{name}.a"),
                ParamKind::NoDecay,
                Tensor::scalar(S::of(cfg.a_init)),
            )
        });
        Self {
            name: name.to_string(),
            stage,
            cfg: cfg.clone(),
            a,
            membrane: None,
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.membrane = None;
        self.t = 0;
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    pub fn membrane(&self) -> Option<&[S]> {
        self.membrane.as_deref()
    }

    pub fn tau(&self, store: &ParamStore<S>) -> f64 {
        neuron::effective_tau(&self.cfg, self.a.map(|a| store.get(a).item().as_f64()))
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let shape = ctx.g.shape(x).to_vec();
        let per_step = ctx.g.value(x).numel() / ctx.steps;
        let v0 = if ctx.t0 == 0 {
            vec![S::of(self.cfg.v_reset); per_step]
        } else {
            match &self.membrane {
                Some(v) if v.len() == per_step && self.t == ctx.t0 => v.clone(),
                _ => {
                    return Err(Error::State(format!(
                        "{}: window starts at step {} but layer state is at step {}",
                        self.name, ctx.t0, self.t
                    )))
                }
            }
        };
        let flat = ctx.g.reshape(x, &[ctx.steps, per_step])?;
        let a = self.a.map(|a| ctx.params.get(a));
        let (spikes, v_final) = ctx.g.spike(flat, a, self.cfg.params(ctx.smooth), v0)?;
        self.membrane = Some(v_final);
        self.t = ctx.t0 + ctx.steps;
        if let Some(probe) = ctx.probe.as_deref_mut() {
            let tau = neuron::effective_tau(
                &self.cfg,
                self.a.map(|a| ctx.store.get(a).item().as_f64()),
            );
            probe.record_spikes(&self.name, self.stage, ctx.g.value(spikes), ctx.steps, ctx.t0, tau);
        }
        ctx.g.reshape(spikes, &shape)
    }
}

/// Static probe metadata of a synaptic layer.
#[derive(Clone, Debug)]
pub struct SynapseMeta {
    pub stage: usize,
    pub kind: OpKind,
    pub driver: Option<String>,
    pub mac_billed: bool,
    pub chain_head: bool,
}

impl SynapseMeta {
    pub fn driven_by(stage: usize, kind: OpKind, driver: &str, chain_head: bool) -> Self {
        Self {
            stage,
            kind,
            driver: Some(driver.to_string()),
            mac_billed: false,
            chain_head,
        }
    }

    pub fn first_layer(stage: usize) -> Self {
        Self {
            stage,
            kind: OpKind::Conv,
            driver: None,
            mac_billed: true,
            chain_head: false,
        }
    }
}

/// Convolution without bias (a following normalization supplies the offset).
#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub weight: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub groups: usize,
    pub meta: SynapseMeta,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub groups: usize,
}

impl ConvSpec {
    pub fn square(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, groups: usize) -> Self {
        Self {
            in_channels: cin,
            out_channels: cout,
            kernel: vec![k, k],
            stride: vec![stride, stride],
            padding: vec![pad, pad],
            groups,
        }
    }

    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Self::square(cin, cout, 1, 1, 0, 1)
    }

    pub fn depthwise(c: usize, k: usize, stride: usize) -> Self {
        Self::square(c, c, k, stride, k / 2, c)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels / self.groups];
        s.extend_from_slice(&self.kernel);
        s
    }

    /// Output spatial extent for the given input extent.
    pub fn output_extent(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.kernel.len() {
            return Err(Error::shape("convolve", input, &self.kernel));
        }
        input
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                let padded = n + 2 * self.padding[d];
                if self.stride[d] == 0 || self.kernel[d] > padded {
                    Err(Error::invalid(
                        "convolve",
                        format!("kernel {:?} does not fit input {input:?}", self.kernel),
                    ))
                } else {
                    Ok((padded - self.kernel[d]) / self.stride[d] + 1)
                }
            })
            .collect()
    }

    /// Dense MACs for one sample with the given input spatial extent.
    pub fn flops(&self, input: &[usize]) -> Result<u64> {
        let out: usize = self.output_extent(input)?.iter().product();
        let k: usize = self.kernel.iter().product();
        Ok((out * self.out_channels * k * (self.in_channels / self.groups)) as u64)
    }
}

impl Conv {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        spec: ConvSpec,
        meta: SynapseMeta,
    ) -> Result<Self> {
        if spec.groups == 0
            || !spec.in_channels.is_multiple_of(spec.groups)
            || !spec.out_channels.is_multiple_of(spec.groups)
        {
            return Err(Error::invalid(
                "convolve",
                format!("{name}: channels not divisible by groups {}", spec.groups),
            ));
        }
        let weight = store.add_trunc_normal(format!("{name}.weight"), &spec.weight_shape(), INIT_STD, rng);
        Ok(Self {
            name: name.to_string(),
            weight,
            in_channels: spec.in_channels,
            out_channels: spec.out_channels,
            kernel: spec.kernel,
            stride: spec.stride,
            padding: spec.padding,
            groups: spec.groups,
            meta,
        })
    }

    pub fn spec(&self) -> ConvSpec {
        ConvSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: self.kernel.clone(),
            stride: self.stride.clone(),
            padding: self.padding.clone(),
            groups: self.groups,
        }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let shape = ctx.g.shape(x).to_vec();
        if shape.len() != 2 + self.kernel.len() || shape[1] != self.in_channels {
            return Err(Error::Shape {
                op: "convolve",
                lhs: shape,
                rhs: self.spec().weight_shape(),
            });
        }
        let w = ctx.params.get(self.weight);
        let y = ctx.g.conv(x, w, None, &self.stride, &self.padding, self.groups)?;
        if let Some(probe) = ctx.probe.as_deref_mut() {
            let flops = self.spec().flops(&shape[2..])? * shape[0] as u64;
            let input = ctx.g.value(x);
            let exact = (probe.exact && self.meta.chain_head && input.is_binary())
                .then(|| energy::exact_conv_acs(input, &self.spec()))
                .transpose()?;
            let info = SynapseInfo {
                name: &self.name,
                stage: self.meta.stage,
                kind: self.meta.kind,
                driver: self.meta.driver.as_deref(),
                mac_billed: self.meta.mac_billed,
                chain_head: self.meta.chain_head,
            };
            probe.record_synapse(&info, flops, input, exact);
        }
        Ok(y)
    }
}

/// Batch normalization over `[steps * B, C, *spatial]` feature maps.
#[derive(Clone, Debug)]
pub struct Norm {
    pub name: String,
    pub mode: NormMode,
    pub channels: usize,
    /// Number of affine/statistic slots along time (T for TDBN, 1 otherwise).
    pub time_slots: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub eps: f64,
    pub momentum: f64,
}

impl Norm {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        channels: usize,
        mode: NormMode,
        time_steps: usize,
    ) -> Self {
        let time_slots = match mode {
            NormMode::PlainBn => 1,
            NormMode::Tdbn => time_steps,
        };
        let shape: &[usize] = if time_slots == 1 {
            &[channels]
        } else {
            &[time_slots, channels]
        };
        Self {
            name: name.to_string(),
            mode,
            channels,
            time_slots,
            gamma: store.add(format!("{name}.gamma"), ParamKind::NoDecay, Tensor::ones(shape)),
            beta: store.add(format!("{name}.beta"), ParamKind::NoDecay, Tensor::zeros(shape)),
            running_mean: store.add(
                format!("{name}.running_mean"),
                ParamKind::Buffer,
                Tensor::zeros(shape),
            ),
            running_var: store.add(
                format!("{name}.running_var"),
                ParamKind::Buffer,
                Tensor::ones(shape),
            ),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    /// Slot range of the current window and its layout.
    fn window(&self, shape: &[usize], t0: usize, steps: usize, batch: usize) -> Result<(usize, usize, BnLayout)> {
        if shape[1] != self.channels {
            return Err(Error::shape("batch_stats_normalize", shape, &[self.channels]));
        }
        let spatial: usize = shape[2..].iter().product();
        if shape[0] != steps * batch {
            return Err(Error::shape("batch_stats_normalize", shape, &[steps * batch]));
        }
        match self.mode {
            NormMode::PlainBn => Ok((
                0,
                self.channels,
                BnLayout {
                    groups: 1,
                    batch: steps * batch,
                    channels: self.channels,
                    spatial,
                },
            )),
            NormMode::Tdbn => {
                if t0 + steps > self.time_slots {
                    return Err(Error::invalid(
                        "tdbn_forward",
                        format!(
                            "{}: steps {}..{} exceed configured T = {}",
                            self.name,
                            t0,
                            t0 + steps,
                            self.time_slots
                        ),
                    ));
                }
                Ok((
                    t0 * self.channels,
                    steps * self.channels,
                    BnLayout {
                        groups: steps,
                        batch,
                        channels: self.channels,
                        spatial,
                    },
                ))
            }
        }
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        self.forward_with_batch(ctx, x, ctx.batch)
    }

    /// Normalizes a tensor that has no time axis (`[B, C, ...]`).
    pub fn forward_timeless<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        debug_assert_eq!(self.mode, NormMode::PlainBn);
        let (steps, t0) = (ctx.steps, ctx.t0);
        ctx.steps = 1;
        ctx.t0 = 0;
        let out = self.forward_with_batch(ctx, x, ctx.batch);
        ctx.steps = steps;
        ctx.t0 = t0;
        out
    }

    fn forward_with_batch<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var, batch: usize) -> Result<Var> {
        let shape = ctx.g.shape(x).to_vec();
        if self.mode == NormMode::Tdbn && ctx.training && ctx.steps != self.time_slots {
            return Err(Error::invalid(
                "tdbn_forward",
                format!(
                    "{}: input has {} time steps, configured T = {}",
                    self.name, ctx.steps, self.time_slots
                ),
            ));
        }
        let (start, len, layout) = self.window(&shape, ctx.t0, ctx.steps, batch)?;
        let whole = start == 0 && len == self.time_slots * self.channels;
        let (gamma, beta) = if whole {
            (ctx.params.get(self.gamma), ctx.params.get(self.beta))
        } else {
            if ctx.training {
                return Err(Error::State(format!(
                    "{}: partial time windows are evaluation-only",
                    self.name
                )));
            }
            let slice = |id: ParamId, store: &ParamStore<S>| {
                Tensor::from_vec(&[len], store.get(id).data()[start..start + len].to_vec())
            };
            let gt = slice(self.gamma, ctx.store);
            let bt = slice(self.beta, ctx.store);
            (ctx.g.constant(gt), ctx.g.constant(bt))
        };
        if ctx.training {
            let (y, moments) =
                ctx.g.batch_norm(x, gamma, beta, layout, BnStats::Batch { eps: self.eps })?;
            let m = moments.expect("batch statistics");
            let unbias = if m.count > 1 {
                m.count as f64 / (m.count - 1) as f64
            } else {
                1.0
            };
            let mom = self.momentum;
            let rm = ctx.store.get_mut(self.running_mean).data_mut();
            for (r, &b) in rm[start..start + len].iter_mut().zip(&m.mean) {
                *r = S::of((1.0 - mom) * r.as_f64() + mom * b);
            }
            let rv = ctx.store.get_mut(self.running_var).data_mut();
            for (r, &b) in rv[start..start + len].iter_mut().zip(&m.var) {
                *r = S::of((1.0 - mom) * r.as_f64() + mom * b * unbias);
            }
            Ok(y)
        } else {
            let mean: Vec<f64> = ctx.store.get(self.running_mean).data()[start..start + len]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            let var: Vec<f64> = ctx.store.get(self.running_var).data()[start..start + len]
                .iter()
                .map(|v| v.as_f64())
                .collect();
            let (y, _) = ctx.g.batch_norm(
                x,
                gamma,
                beta,
                layout,
                BnStats::Fixed {
                    mean: &mean,
                    var: &var,
                    eps: self.eps,
                },
            )?;
            Ok(y)
        }
    }
}

/// Convolution (or token-wise linear map) followed by normalization.
#[derive(Clone, Debug)]
pub struct ConvBn {
    pub conv: Conv,
    pub norm: Norm,
}

impl ConvBn {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        spec: ConvSpec,
        meta: SynapseMeta,
        mode: NormMode,
        time_steps: usize,
    ) -> Result<Self> {
        let cout = spec.out_channels;
        let conv = Conv::new(store, rng, &format!("{name}.conv"), spec, meta)?;
        let norm = Norm::new(store, &format!("{name}.bn"), cout, mode, time_steps);
        Ok(Self { conv, norm })
    }

    /// Token-wise linear map `C_in -> C_out` followed by normalization.
    #[allow(clippy::too_many_arguments)]
    pub fn linear<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        cin: usize,
        cout: usize,
        stage: usize,
        driver: &str,
        mode: NormMode,
        time_steps: usize,
    ) -> Result<Self> {
        let conv = Conv::new(
            store,
            rng,
            &format!("{name}.linear"),
            ConvSpec::pointwise(cin, cout),
            SynapseMeta::driven_by(stage, OpKind::Linear, driver, true),
        )?;
        let norm = Norm::new(store, &format!("{name}.bn"), cout, mode, time_steps);
        Ok(Self { conv, norm })
    }

    pub fn forward<S: Scalar>(&self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        self.norm.forward(ctx, y)
    }

    pub fn fuse<S: Scalar>(&self, store: &ParamStore<S>, training: bool) -> Result<FusedConv<S>> {
        fuse_linear_layers(&self.conv, &self.norm, store, training)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchEmbedSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// False only for the first stage, which consumes real-valued frames.
    pub has_input_neuron: bool,
}

impl PatchEmbedSpec {
    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec::square(
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.padding,
            1,
        )
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::invalid("patch_embed", "stride must be >= 1"));
        }
        let out = self.conv_spec().output_extent(&[h, w]).map_err(|_| {
            Error::invalid(
                "patch_embed",
                format!("kernel {} does not fit a {h}x{w} input", self.kernel),
            )
        })?;
        Ok((out[0], out[1]))
    }
}

/// Stage entry: optional spiking layer, then ConvBN.
#[derive(Clone, Debug)]
pub struct PatchEmbed<S: Scalar = f32> {
    pub spec: PatchEmbedSpec,
    pub neuron: Option<SpikingLayer<S>>,
    pub conv_bn: ConvBn,
}

impl<S: Scalar> PatchEmbed<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore<S>,
        rng: &mut impl Rng,
        name: &str,
        stage: usize,
        spec: PatchEmbedSpec,
        neuron_cfg: &NeuronConfig,
        mode: NormMode,
        time_steps: usize,
    ) -> Result<Self> {
        let neuron = spec
            .has_input_neuron
            .then(|| SpikingLayer::new(store, &format!("{name}.sn"), stage, neuron_cfg));
        let meta = match &neuron {
            Some(n) => SynapseMeta::driven_by(stage, OpKind::Conv, &n.name, true),
            None => SynapseMeta::first_layer(stage),
        };
        let conv_bn = ConvBn::new(store, rng, name, spec.conv_spec(), meta, mode, time_steps)?;
        Ok(Self {
            spec,
            neuron,
            conv_bn,
        })
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let x = match self.neuron.as_mut() {
            Some(n) => n.forward(ctx, x)?,
            None => x,
        };
        self.conv_bn.forward(ctx, x)
    }
}

/// A convolution with normalization folded into per-slot weights and bias.
/// TDBN layers fold into one kernel per time step.
#[derive(Clone, Debug)]
pub struct FusedConv<S: Scalar = f32> {
    pub weights: Vec<Tensor<S>>,
    pub biases: Vec<Tensor<S>>,
    pub spec: ConvSpec,
    pub per_time: bool,
}

/// Folds an evaluation-mode normalization into the preceding linear layer:
/// `W' = γ W / sqrt(σ² + ε)`, `b' = β - γ μ / sqrt(σ² + ε)`.
pub fn fuse_linear_layers<S: Scalar>(
    conv: &Conv,
    norm: &Norm,
    store: &ParamStore<S>,
    training: bool,
) -> Result<FusedConv<S>> {
    if training {
        return Err(Error::State(
            "fuse_linear_layers requires evaluation mode (frozen statistics)".into(),
        ));
    }
    if norm.channels != conv.out_channels {
        return Err(Error::shape("fuse", &[conv.out_channels], &[norm.channels]));
    }
    let w = store.get(conv.weight);
    let per_out = w.numel() / conv.out_channels;
    let gamma = store.get(norm.gamma).data();
    let beta = store.get(norm.beta).data();
    let mean = store.get(norm.running_mean).data();
    let var = store.get(norm.running_var).data();
    let mut weights = Vec::with_capacity(norm.time_slots);
    let mut biases = Vec::with_capacity(norm.time_slots);
    for t in 0..norm.time_slots {
        let mut wd = Vec::with_capacity(w.numel());
        let mut bd = Vec::with_capacity(conv.out_channels);
        for c in 0..conv.out_channels {
            let s = t * norm.channels + c;
            let scale = gamma[s].as_f64() / (var[s].as_f64() + norm.eps).sqrt();
            wd.extend(
                w.data()[c * per_out..][..per_out]
                    .iter()
                    .map(|&v| S::of(v.as_f64() * scale)),
            );
            bd.push(S::of(beta[s].as_f64() - mean[s].as_f64() * scale));
        }
        weights.push(Tensor::from_vec(w.shape(), wd));
        biases.push(Tensor::from_vec(&[conv.out_channels], bd));
    }
    Ok(FusedConv {
        weights,
        biases,
        spec: conv.spec(),
        per_time: norm.time_slots > 1,
    })
}

impl<S: Scalar> FusedConv<S> {
    /// Applies the fused layer to `[steps * batch, C, *spatial]` starting at
    /// absolute step `t0`.
    pub fn forward(&self, x: &Tensor<S>, t0: usize, steps: usize) -> Result<Tensor<S>> {
        let n = x.shape()[0];
        if !n.is_multiple_of(steps) {
            return Err(Error::shape("fused_conv", x.shape(), &[steps]));
        }
        let per = n / steps;
        let chunk = x.numel() / n * per;
        let mut out_data = Vec::new();
        let mut out_shape = Vec::new();
        for s in 0..steps {
            let slot = if self.per_time { t0 + s } else { 0 };
            if slot >= self.weights.len() {
                return Err(Error::invalid("fused_conv", format!("time step {slot} out of range")));
            }
            let mut sub_shape = x.shape().to_vec();
            sub_shape[0] = per;
            let sub = Tensor::from_vec(&sub_shape, x.data()[s * chunk..][..chunk].to_vec());
            let mut g = Graph::new();
            let xv = g.constant(sub);
            let wv = g.constant(self.weights[slot].clone());
            let bv = g.constant(self.biases[slot].clone());
            let y = g.conv(xv, wv, Some(bv), &self.spec.stride, &self.spec.padding, self.spec.groups)?;
            out_shape = g.shape(y).to_vec();
            out_data.extend_from_slice(g.value(y).data());
        }
        out_shape[0] = n;
        Tensor::new(&out_shape, out_data)
    }
}

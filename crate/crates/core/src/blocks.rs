//! Network blocks: local feature extractor, spiking self-attention, global
//! self-attention, local pathway and classification head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{Conv, ConvBn, ConvSpec, ForwardCtx, Norm, NormMode, SpikingLayer, SynapseMeta};
use crate::neuron::NeuronConfig;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::probe::{OpKind, SynapseInfo};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockConfig {
    pub mlp_ratio: usize,
    pub dw_kernel: usize,
    pub attn_scale: f64,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            mlp_ratio: 2,
            dw_kernel: 5,
            attn_scale: 0.125,
        }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mlp_ratio < 1 {
            return Err(Error::Config("block.mlp_ratio must be >= 1".into()));
        }
        if self.dw_kernel.is_multiple_of(2) {
            return Err(Error::Config("block.dw_kernel must be odd".into()));
        }
        if !(self.attn_scale > 0.0 && self.attn_scale.is_finite()) {
            return Err(Error::Config("block.attn_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Shared construction context of one stage.
pub struct BlockEnv<'a, S: Scalar, R: Rng> {
    pub store: &'a mut ParamStore<S>,
    pub rng: &'a mut R,
    pub stage: usize,
    pub neuron: &'a NeuronConfig,
    pub norm: NormMode,
    pub time_steps: usize,
    pub block: &'a BlockConfig,
}

impl<S: Scalar, R: Rng> BlockEnv<'_, S, R> {
    fn sn(&mut self, name: &str) -> SpikingLayer<S> {
        SpikingLayer::new(self.store, name, self.stage, self.neuron)
    }

    fn linear_bn(&mut self, name: &str, cin: usize, cout: usize, driver: &str) -> Result<ConvBn> {
        ConvBn::linear(
            self.store,
            self.rng,
            name,
            cin,
            cout,
            self.stage,
            driver,
            self.norm,
            self.time_steps,
        )
    }

    fn conv(&mut self, name: &str, spec: ConvSpec, driver: &str, chain_head: bool) -> Result<Conv> {
        let kind = if spec.kernel.iter().all(|&k| k == 1) && spec.groups == 1 {
            OpKind::Linear
        } else {
            OpKind::Conv
        };
        Conv::new(
            self.store,
            self.rng,
            name,
            spec,
            SynapseMeta::driven_by(self.stage, kind, driver, chain_head),
        )
    }

    fn norm(&mut self, name: &str, channels: usize) -> Norm {
        Norm::new(self.store, name, channels, self.norm, self.time_steps)
    }
}

/// Visits every spiking layer of a block.
pub trait Neurons<S: Scalar> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>>;
    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>>;

    fn reset(&mut self) {
        for n in self.neurons_mut() {
            n.reset();
        }
    }
}

/// `LinearBN(SN(LinearBN(SN(x))))`, expanding `C -> rC -> C` token-wise.
#[derive(Clone, Debug)]
pub struct Mlp<S: Scalar = f32> {
    pub sn1: SpikingLayer<S>,
    pub fc1: ConvBn,
    pub sn2: SpikingLayer<S>,
    pub fc2: ConvBn,
}

impl<S: Scalar> Mlp<S> {
    pub fn new<R: Rng>(env: &mut BlockEnv<'_, S, R>, name: &str, channels: usize) -> Result<Self> {
        let hidden = channels * env.block.mlp_ratio;
        let sn1 = env.sn(&format!("{name}.sn1"));
        let fc1 = env.linear_bn(&format!("{name}.fc1"), channels, hidden, &sn1.name)?;
        let sn2 = env.sn(&format!("{name}.sn2"));
        let fc2 = env.linear_bn(&format!("{name}.fc2"), hidden, channels, &sn2.name)?;
        Ok(Self { sn1, fc1, sn2, fc2 })
    }

    /// The branch output (without the residual).
    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let h = self.sn1.forward(ctx, x)?;
        let h = self.fc1.forward(ctx, h)?;
        let h = self.sn2.forward(ctx, h)?;
        self.fc2.forward(ctx, h)
    }
}

impl<S: Scalar> Neurons<S> for Mlp<S> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        vec![&self.sn1, &self.sn2]
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        vec![&mut self.sn1, &mut self.sn2]
    }
}

fn residual<S: Scalar>(ctx: &mut ForwardCtx<'_, S>, x: Var, branch: Var) -> Result<Var> {
    ctx.g.add(x, branch)
}

fn check_channels<S: Scalar>(ctx: &ForwardCtx<'_, S>, x: Var, channels: usize, op: &'static str) -> Result<()> {
    let s = ctx.g.shape(x);
    if s.len() != 4 || s[1] != channels {
        return Err(Error::shape(op, s, &[channels]));
    }
    Ok(())
}

/// Local feature extractor: `X = x + BN(PW(DW(PW(SN(x)))))`, `out = X + MLP(X)`.
#[derive(Clone, Debug)]
pub struct Lfe<S: Scalar = f32> {
    pub channels: usize,
    pub sn: SpikingLayer<S>,
    pub pw1: Conv,
    pub dw: Conv,
    pub pw2: Conv,
    pub bn: Norm,
    pub mlp: Mlp<S>,
}

impl<S: Scalar> Lfe<S> {
    pub fn new<R: Rng>(env: &mut BlockEnv<'_, S, R>, name: &str, channels: usize) -> Result<Self> {
        let sn = env.sn(&format!("{name}.sn"));
        // the PW-DW-PW-BN cascade is one linear map driven by `sn`; only
        // its first layer sees the spikes directly
        let pw1 = env.conv(&format!("{name}.pw1"), ConvSpec::pointwise(channels, channels), &sn.name, true)?;
        let dw = env.conv(
            &format!("{name}.dw"),
            ConvSpec::depthwise(channels, env.block.dw_kernel, 1),
            &sn.name,
            false,
        )?;
        let pw2 = env.conv(&format!("{name}.pw2"), ConvSpec::pointwise(channels, channels), &sn.name, false)?;
        let bn = env.norm(&format!("{name}.bn"), channels);
        let mlp = Mlp::new(env, &format!("{name}.mlp"), channels)?;
        Ok(Self {
            channels,
            sn,
            pw1,
            dw,
            pw2,
            bn,
            mlp,
        })
    }

    /// The convolutional branch `BN(PW(DW(PW(SN(x)))))`.
    pub fn conv_branch(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        check_channels(ctx, x, self.channels, "lfe_forward")?;
        let h = self.sn.forward(ctx, x)?;
        let h = self.pw1.forward(ctx, h)?;
        let h = self.dw.forward(ctx, h)?;
        let h = self.pw2.forward(ctx, h)?;
        self.bn.forward(ctx, h)
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let b = self.conv_branch(ctx, x)?;
        let x = residual(ctx, x, b)?;
        let m = self.mlp.forward(ctx, x)?;
        residual(ctx, x, m)
    }
}

impl<S: Scalar> Neurons<S> for Lfe<S> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        let mut v = vec![&self.sn];
        v.extend(self.mlp.neurons());
        v
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        let mut v = vec![&mut self.sn];
        v.extend(self.mlp.neurons_mut());
        v
    }
}

/// Spiking self-attention, evaluated as `Q·(Kᵀ·V)·s`.
#[derive(Clone, Debug)]
pub struct Ssa<S: Scalar = f32> {
    pub name: String,
    pub stage: usize,
    pub channels: usize,
    pub scale: f64,
    pub sn_in: SpikingLayer<S>,
    pub q: ConvBn,
    pub sn_q: SpikingLayer<S>,
    pub k: ConvBn,
    pub sn_k: SpikingLayer<S>,
    pub v: ConvBn,
    pub sn_v: SpikingLayer<S>,
    pub sn_attn: SpikingLayer<S>,
    pub proj: ConvBn,
}

/// `Q·(Kᵀ·V)·s` on token-major spike matrices `[N, C]`, for reference
/// and for tests.
pub fn attention_reference(q: &[f64], k: &[f64], v: &[f64], n: usize, c: usize, scale: f64) -> Vec<f64> {
    let mut m = vec![0.0; c * c];
    for t in 0..n {
        for i in 0..c {
            let ki = k[t * c + i];
            if ki != 0.0 {
                for j in 0..c {
                    m[i * c + j] += ki * v[t * c + j];
                }
            }
        }
    }
    let mut out = vec![0.0; n * c];
    for t in 0..n {
        for i in 0..c {
            let qi = q[t * c + i];
            if qi != 0.0 {
                for j in 0..c {
                    out[t * c + j] += qi * m[i * c + j];
                }
            }
        }
    }
    out.iter_mut().for_each(|o| *o *= scale);
    out
}

impl<S: Scalar> Ssa<S> {
    pub fn new<R: Rng>(env: &mut BlockEnv<'_, S, R>, name: &str, channels: usize) -> Result<Self> {
        let sn_in = env.sn(&format!("{name}.sn_in"));
        let q = env.linear_bn(&format!("{name}.q"), channels, channels, &sn_in.name)?;
        let sn_q = env.sn(&format!("{name}.sn_q"));
        let k = env.linear_bn(&format!("{name}.k"), channels, channels, &sn_in.name)?;
        let sn_k = env.sn(&format!("{name}.sn_k"));
        let v = env.linear_bn(&format!("{name}.v"), channels, channels, &sn_in.name)?;
        let sn_v = env.sn(&format!("{name}.sn_v"));
        let sn_attn = env.sn(&format!("{name}.sn_attn"));
        let proj = env.linear_bn(&format!("{name}.proj"), channels, channels, &sn_attn.name)?;
        Ok(Self {
            name: name.to_string(),
            stage: env.stage,
            channels,
            scale: env.block.attn_scale,
            sn_in,
            q,
            sn_q,
            k,
            sn_k,
            v,
            sn_v,
            sn_attn,
            proj,
        })
    }

    /// Spike-form Q, K, V, each `[steps * B, C, H, W]`.
    pub fn qkv(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<[Var; 3]> {
        check_channels(ctx, x, self.channels, "ssa_forward")?;
        let s = self.sn_in.forward(ctx, x)?;
        let q = self.q.forward(ctx, s)?;
        let q = self.sn_q.forward(ctx, q)?;
        let k = self.k.forward(ctx, s)?;
        let k = self.sn_k.forward(ctx, k)?;
        let v = self.v.forward(ctx, s)?;
        let v = self.sn_v.forward(ctx, v)?;
        Ok([q, k, v])
    }

    /// `Q·(Kᵀ·V)·s` in channel-first form: `M = K_c V_cᵀ`, `out_c = Mᵀ Q_c`.
    pub fn attention(&self, ctx: &mut ForwardCtx<'_, S>, q: Var, k: Var, v: Var) -> Result<Var> {
        let shape = ctx.g.shape(q).to_vec();
        let (nb, c) = (shape[0], shape[1]);
        let n: usize = shape[2..].iter().product();
        let flat = [nb, c, n];
        let qc = ctx.g.reshape(q, &flat)?;
        let kc = ctx.g.reshape(k, &flat)?;
        let vc = ctx.g.reshape(v, &flat)?;
        let m = ctx.g.matmul_t(kc, vc, false, true)?;
        let out = ctx.g.matmul_t(m, qc, true, false)?;
        if let Some(probe) = ctx.probe.as_deref_mut() {
            let flops = (nb * n * c * c) as u64;
            let (qt, kt, vt) = (ctx.g.value(q), ctx.g.value(k), ctx.g.value(v));
            let (kv_exact, qm_exact) = if probe.exact {
                (Some(kv_exact_acs(kt, vt, nb, c, n)), Some(qt.count_nonzero() as u64 * c as u64))
            } else {
                (None, None)
            };
            let kv = format!("{}.kv", self.name);
            let qm = format!("{}.qm", self.name);
            probe.record_synapse(
                &SynapseInfo {
                    name: &kv,
                    stage: self.stage,
                    kind: OpKind::SsaMatmul,
                    driver: Some(&self.sn_k.name),
                    mac_billed: false,
                    chain_head: true,
                },
                flops,
                kt,
                kv_exact,
            );
            probe.record_synapse(
                &SynapseInfo {
                    name: &qm,
                    stage: self.stage,
                    kind: OpKind::SsaMatmul,
                    driver: Some(&self.sn_q.name),
                    mac_billed: false,
                    chain_head: true,
                },
                flops,
                qt,
                qm_exact,
            );
            // V enters K·Vᵀ as the second spike operand
            if !vt.is_binary() {
                if let Some(rec) = probe.synapses.iter_mut().find(|r| r.name == kv) {
                    rec.binary_violations += 1;
                }
            }
        }
        let out = ctx.g.scale(out, self.scale);
        ctx.g.reshape(out, &shape)
    }

    /// The attention branch `LinearBN(SN(Q·(Kᵀ·V)·s))`.
    pub fn branch(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let [q, k, v] = self.qkv(ctx, x)?;
        let a = self.attention(ctx, q, k, v)?;
        let a = self.sn_attn.forward(ctx, a)?;
        self.proj.forward(ctx, a)
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let b = self.branch(ctx, x)?;
        residual(ctx, x, b)
    }
}

/// Accumulates of `K_c · V_cᵀ` per sample: one per `(n, i, j)` with
/// `K[i, n] = V[j, n] = 1`, i.e. `Σ_n nnz(K[:, n]) · nnz(V[:, n])`.
fn kv_exact_acs<S: Scalar>(k: &Tensor<S>, v: &Tensor<S>, nb: usize, c: usize, n: usize) -> u64 {
    let column_counts = |t: &Tensor<S>, b: usize| -> Vec<u64> {
        let mut counts = vec![0u64; n];
        for i in 0..c {
            for (cnt, x) in counts.iter_mut().zip(&t.data()[(b * c + i) * n..][..n]) {
                if *x != S::zero() {
                    *cnt += 1;
                }
            }
        }
        counts
    };
    (0..nb)
        .map(|b| {
            let (kc, vc) = (column_counts(k, b), column_counts(v, b));
            kc.iter().zip(&vc).map(|(a, b)| a * b).sum::<u64>()
        })
        .sum()
}

impl<S: Scalar> Neurons<S> for Ssa<S> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        vec![&self.sn_in, &self.sn_q, &self.sn_k, &self.sn_v, &self.sn_attn]
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        vec![
            &mut self.sn_in,
            &mut self.sn_q,
            &mut self.sn_k,
            &mut self.sn_v,
            &mut self.sn_attn,
        ]
    }
}

/// Global self-attention block: `X = SSA(x)`, `out = X + MLP(X)`.
#[derive(Clone, Debug)]
pub struct Gsa<S: Scalar = f32> {
    pub ssa: Ssa<S>,
    pub mlp: Mlp<S>,
}

impl<S: Scalar> Gsa<S> {
    pub fn new<R: Rng>(env: &mut BlockEnv<'_, S, R>, name: &str, channels: usize) -> Result<Self> {
        let ssa = Ssa::new(env, &format!("{name}.ssa"), channels)?;
        let mlp = Mlp::new(env, &format!("{name}.mlp"), channels)?;
        Ok(Self { ssa, mlp })
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let x = self.ssa.forward(ctx, x)?;
        let m = self.mlp.forward(ctx, x)?;
        residual(ctx, x, m)
    }
}

impl<S: Scalar> Neurons<S> for Gsa<S> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        let mut v = self.ssa.neurons();
        v.extend(self.mlp.neurons());
        v
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        let mut v = self.ssa.neurons_mut();
        v.extend(self.mlp.neurons_mut());
        v
    }
}

/// `BN(PW(DW(SN(x))))`, bridging the stage-3 input to the stage-4 resolution.
#[derive(Clone, Debug)]
pub struct LocalPathway<S: Scalar = f32> {
    pub sn: SpikingLayer<S>,
    pub dw: Conv,
    pub pw: ConvBn,
}

pub const LP_KERNEL: usize = 5;
pub const LP_STRIDE: usize = 2;

impl<S: Scalar> LocalPathway<S> {
    pub fn new<R: Rng>(env: &mut BlockEnv<'_, S, R>, name: &str, cin: usize, cout: usize) -> Result<Self> {
        let sn = env.sn(&format!("{name}.sn"));
        let dw = env.conv(
            &format!("{name}.dw"),
            ConvSpec::depthwise(cin, LP_KERNEL, LP_STRIDE),
            &sn.name,
            true,
        )?;
        let pw_conv = env.conv(&format!("{name}.pw"), ConvSpec::pointwise(cin, cout), &sn.name, false)?;
        let norm = env.norm(&format!("{name}.bn"), cout);
        Ok(Self {
            sn,
            dw,
            pw: ConvBn { conv: pw_conv, norm },
        })
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let e = self.dw.spec().output_extent(&[h, w])?;
        Ok((e[0], e[1]))
    }

    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Var> {
        let h = self.sn.forward(ctx, x)?;
        let h = self.dw.forward(ctx, h)?;
        self.pw.forward(ctx, h)
    }
}

impl<S: Scalar> Neurons<S> for LocalPathway<S> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        vec![&self.sn]
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        vec![&mut self.sn]
    }
}

/// SN, learnable weighted sum over time and space (depthwise 3D conv with a
/// full-extent kernel), BN, then a linear classifier.
#[derive(Clone, Debug)]
pub struct ClassificationHead<S: Scalar = f32> {
    pub name: String,
    pub channels: usize,
    pub extent: [usize; 3],
    pub num_classes: usize,
    pub sn: SpikingLayer<S>,
    pub pool: Conv,
    pub bn: Norm,
    pub fc_weight: ParamId,
    pub fc_bias: ParamId,
    pending: Vec<Tensor<S>>,
}

impl<S: Scalar> ClassificationHead<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        env: &mut BlockEnv<'_, S, R>,
        name: &str,
        channels: usize,
        extent: [usize; 3],
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        let sn = env.sn(&format!("{name}.sn"));
        let pool = Conv::new(
            env.store,
            env.rng,
            &format!("{name}.pool"),
            ConvSpec {
                in_channels: channels,
                out_channels: channels,
                kernel: extent.to_vec(),
                stride: vec![1, 1, 1],
                padding: vec![0, 0, 0],
                groups: channels,
            },
            SynapseMeta::driven_by(env.stage, OpKind::Conv, &sn.name, true),
        )?;
        let bn = Norm::new(env.store, &format!("{name}.bn"), channels, NormMode::PlainBn, 1);
        let fc_weight =
            env.store
                .add_trunc_normal(format!("{name}.fc.weight"), &[num_classes, channels], crate::layers::INIT_STD, env.rng);
        let fc_bias = env.store.add(
            format!("{name}.fc.bias"),
            ParamKind::NoDecay,
            Tensor::zeros(&[num_classes]),
        );
        Ok(Self {
            name: name.to_string(),
            channels,
            extent,
            num_classes,
            sn,
            pool,
            bn,
            fc_weight,
            fc_bias,
            pending: Vec::new(),
        })
    }

    pub fn reset(&mut self) {
        self.sn.reset();
        self.pending.clear();
    }

    /// Steps buffered towards the next complete clip.
    pub fn buffered_steps(&self) -> usize {
        self.pending.len()
    }

    /// Consumes `[steps * B, 2C, H, W]` features. Returns logits once all
    /// `T` steps of the clip have been seen.
    pub fn forward(&mut self, ctx: &mut ForwardCtx<'_, S>, x: Var) -> Result<Option<Var>> {
        let s = ctx.g.shape(x).to_vec();
        let [t, h, w] = self.extent;
        if s.len() != 4 || s[1] != self.channels || s[2] != h || s[3] != w {
            return Err(Error::Shape {
                op: "classification_head",
                lhs: s,
                rhs: vec![ctx.steps * ctx.batch, self.channels, h, w],
            });
        }
        let spikes = self.sn.forward(ctx, x)?;
        let b = ctx.batch;
        let clip = if ctx.full_window() {
            spikes
        } else {
            if ctx.training {
                return Err(Error::State("partial time windows are evaluation-only".into()));
            }
            self.pending.push(ctx.g.value(spikes).clone());
            let buffered: usize = self.pending.iter().map(|p| p.shape()[0] / b).sum();
            if buffered < t {
                return Ok(None);
            }
            let mut data = Vec::new();
            for p in self.pending.drain(..) {
                data.extend_from_slice(p.data());
            }
            ctx.g.constant(Tensor::new(&[t * b, self.channels, h, w], data)?)
        };
        let v = ctx.g.reshape(clip, &[t, b, self.channels, h, w])?;
        let v = ctx.g.permute(v, &[1, 2, 0, 3, 4])?;
        let pooled = self.pool.forward(ctx, v)?;
        let normed = self.bn.forward_timeless(ctx, pooled)?;
        let flat = ctx.g.reshape(normed, &[b, self.channels])?;
        let (wt, bias) = (ctx.params.get(self.fc_weight), ctx.params.get(self.fc_bias));
        let logits = ctx.g.linear(flat, wt, Some(bias))?;
        if let Some(probe) = ctx.probe.as_deref_mut() {
            let fc = format!("{}.fc", self.name);
            let info = SynapseInfo {
                name: &fc,
                stage: self.pool.meta.stage,
                kind: OpKind::Linear,
                driver: Some(&self.sn.name),
                mac_billed: false,
                chain_head: false,
            };
            let input = ctx.g.value(flat);
            probe.record_synapse(&info, (b * self.channels * self.num_classes) as u64, input, None);
        }
        Ok(Some(logits))
    }
}

impl<S: Scalar> Neurons<S> for ClassificationHead<S> {
    fn neurons(&self) -> Vec<&SpikingLayer<S>> {
        vec![&self.sn]
    }

    fn neurons_mut(&mut self) -> Vec<&mut SpikingLayer<S>> {
        vec![&mut self.sn]
    }

    fn reset(&mut self) {
        ClassificationHead::reset(self);
    }
}

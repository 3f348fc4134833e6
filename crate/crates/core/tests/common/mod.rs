#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svformer_core::blocks::{BlockConfig, BlockEnv};
use svformer_core::layers::{ConvSpec, ForwardCtx, NormMode};
use svformer_core::params::ParamStore;
use svformer_core::{Graph, NeuronConfig, Probe, Result, Scalar, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<S: Scalar>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| S::of(rng.random_range(lo..hi))).collect())
}

pub fn spikes<S: Scalar>(rng: &mut impl Rng, shape: &[usize], p: f64) -> Tensor<S> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| if rng.random_bool(p) { S::one() } else { S::zero() }).collect(),
    )
}

/// Window geometry of a forward call.
#[derive(Clone, Copy, Debug)]
pub struct Window {
    pub training: bool,
    pub t0: usize,
    pub steps: usize,
    pub time_steps: usize,
    pub batch: usize,
}

impl Window {
    pub fn full(training: bool, time_steps: usize, batch: usize) -> Self {
        Self {
            training,
            t0: 0,
            steps: time_steps,
            time_steps,
            batch,
        }
    }
}

/// Runs `f` in a fresh graph with `input` as a constant; returns the value of
/// the output.
pub fn run_layer<S: Scalar>(
    store: &mut ParamStore<S>,
    w: Window,
    input: &Tensor<S>,
    probe: Option<&mut Probe>,
    f: impl FnOnce(&mut ForwardCtx<'_, S>, svformer_core::Var) -> Result<svformer_core::Var>,
) -> Result<Tensor<S>> {
    let mut g = Graph::new();
    let params = store.bind(&mut g, false);
    let x = g.constant(input.clone());
    let mut ctx = ForwardCtx {
        g: &mut g,
        params: &params,
        store,
        training: w.training,
        smooth: false,
        t0: w.t0,
        steps: w.steps,
        time_steps: w.time_steps,
        batch: w.batch,
        probe,
    };
    let y = f(&mut ctx, x)?;
    Ok(g.value(y).clone())
}

pub struct EnvParts {
    pub neuron: NeuronConfig,
    pub block: BlockConfig,
    pub norm: NormMode,
    pub time_steps: usize,
}

impl EnvParts {
    pub fn env<'a, S: Scalar, R: Rng>(&'a self, store: &'a mut ParamStore<S>, rng: &'a mut R) -> BlockEnv<'a, S, R> {
        BlockEnv {
            store,
            rng,
            stage: 1,
            neuron: &self.neuron,
            norm: self.norm,
            time_steps: self.time_steps,
            block: &self.block,
        }
    }
}

/// Scalar recurrence: H = V + (X - (V - Vr)) / tau, S = [H >= Vth],
/// V' = H (1 - S) + Vr S.
pub fn lif_oracle(xs: &[f64], tau: f64, vth: f64, vr: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vr;
    let (mut s_out, mut v_out) = (Vec::new(), Vec::new());
    for &x in xs {
        let h = v + (1.0 / tau) * (x - (v - vr));
        let s = if h >= vth { 1.0 } else { 0.0 };
        v = if s == 1.0 { vr } else { h };
        s_out.push(s);
        v_out.push(v);
    }
    (s_out, v_out)
}

/// Counts `(output, tap, out-channel)` triples that read a 1, by direct
/// enumeration of the 2-D cross-correlation.
pub fn brute_force_acs(x: &Tensor<f32>, spec: &ConvSpec) -> u64 {
    let s = x.shape();
    let (n, cin, h, w) = (s[0], s[1], s[2] as isize, s[3] as isize);
    let (kh, kw) = (spec.kernel[0] as isize, spec.kernel[1] as isize);
    let (sh, sw) = (spec.stride[0] as isize, spec.stride[1] as isize);
    let (ph, pw) = (spec.padding[0] as isize, spec.padding[1] as isize);
    let oh = (h + 2 * ph - kh) / sh + 1;
    let ow = (w + 2 * pw - kw) / sw + 1;
    let cpg = cin / spec.groups;
    let out_per_group = spec.out_channels / spec.groups;
    let mut total = 0u64;
    for b in 0..n {
        for co in 0..spec.out_channels {
            let grp = co / out_per_group;
            for oy in 0..oh {
                for ox in 0..ow {
                    for ci in grp * cpg..(grp + 1) * cpg {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let (iy, ix) = (oy * sh - ph + ky, ox * sw - pw + kx);
                                if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                    continue;
                                }
                                let idx = ((b * cin + ci) as isize * h + iy) * w + ix;
                                if x.data()[idx as usize] != 0.0 {
                                    total += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    total
}

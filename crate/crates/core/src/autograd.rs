//! Reverse-mode differentiation over an append-only tape.
//!
//! Every primitive evaluates eagerly and pushes one node holding its value
//! and the data its backward rule needs. Node ids are assigned in creation
//! order, so the tape is topologically sorted by construction and a single
//! reverse sweep visits each node once.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::neuron::{self, NeuronParams};
use crate::tensor::{inverse_permutation, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for operations defined outside this module.
pub trait CustomBackward<S: Scalar> {
    /// Returns one optional gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[&Tensor<S>], output: &Tensor<S>, grad: &[S]) -> Vec<Option<Vec<S>>>;
}

/// Axis layout for batch normalization: the input is viewed as
/// `[groups, batch, channels, spatial]`, statistics are taken per
/// `(group, channel)` over `(batch, spatial)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnLayout {
    pub groups: usize,
    pub batch: usize,
    pub channels: usize,
    pub spatial: usize,
}

impl BnLayout {
    pub fn slots(&self) -> usize {
        self.groups * self.channels
    }

    fn count(&self) -> usize {
        self.batch * self.spatial
    }
}

/// Where normalization statistics come from.
#[derive(Clone, Debug)]
pub enum BnStats<'a> {
    /// Current batch statistics (training mode).
    Batch { eps: f64 },
    /// Frozen per-slot statistics (evaluation mode).
    Fixed { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

/// Per-slot statistics of a training-mode normalization.
#[derive(Clone, Debug)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<f64>,
    pub count: usize,
}

enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Mean(Var),
    Sum(Var),
    MatMul {
        a: Var,
        b: Var,
        a_t: bool,
        b_t: bool,
        batch: usize,
        a_broadcast: bool,
        b_broadcast: bool,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        layout: BnLayout,
        xhat: Vec<S>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Spike {
        x: Var,
        a: Option<Var>,
        params: NeuronParams,
        steps: usize,
        v0: Vec<S>,
        h: Vec<S>,
        kappa: f64,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward<S>>,
    },
}

struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Recording tape. One training step builds and consumes one graph.
pub struct Graph<S: Scalar = f32> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    consumed: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<S: Scalar>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input tensor that does not receive gradients.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf tensor; when `requires_grad` its gradient is kept after backward.
    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient accumulated for `v` by the last [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        self.grads
            .get(v.0)?
            .as_ref()
            .map(|g| Tensor::from_vec(self.nodes[v.0].value.shape(), g.clone()))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let f = S::of(factor);
        let v = self.value(a).map(|x| x * f);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, f), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(a).permute(axes)?;
        let rg = self.rg(a);
        Ok(self.push(v, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(inputs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis] * inner;
                data.extend_from_slice(&self.value(v).data()[o * d..][..d]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::from_vec(&shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Mean of all elements (f64 accumulation) as a `[1]` tensor.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean();
        let rg = self.rg(a);
        self.push(Tensor::scalar(S::of(m)), Op::Mean(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(S::of(s)), Op::Sum(a), rg)
    }

    /// Batched matrix product over the last two axes. Leading axes must
    /// match, or one operand may be a plain matrix that broadcasts.
    pub fn matmul_t(&mut self, a: Var, b: Var, a_t: bool, b_t: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let (ar, ac) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, k) = if a_t { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if b_t { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let (batch_shape, a_broadcast, b_broadcast) = if ba == bb {
            (ba.to_vec(), false, false)
        } else if ba.is_empty() {
            (bb.to_vec(), true, false)
        } else if bb.is_empty() {
            (ba.to_vec(), false, true)
        } else {
            return Err(Error::shape("matmul", &sa, &sb));
        };
        let batch: usize = batch_shape.iter().product();
        let mut out = vec![S::zero(); batch * m * n];
        kernels::batched_matmul(
            batch,
            self.value(a).data(),
            (ar, ac),
            a_t,
            if a_broadcast { 0 } else { ar * ac },
            self.value(b).data(),
            (br, bc),
            b_t,
            if b_broadcast { 0 } else { br * bc },
            &mut out,
            false,
        );
        let mut shape = batch_shape;
        shape.push(m);
        shape.push(n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::from_vec(&shape, out),
            Op::MatMul {
                a,
                b,
                a_t,
                b_t,
                batch,
                a_broadcast,
                b_broadcast,
            },
            rg,
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `y = x @ w^T + b` for `x: [M, K]`, `w: [N, K]`, `b: [N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[1] {
            return Err(Error::shape("linear", &sx, &sw));
        }
        let (m, n) = (sx[0], sw[0]);
        let mut out = vec![S::zero(); m * n];
        kernels::batched_matmul(
            1,
            self.value(x).data(),
            (m, sx[1]),
            false,
            0,
            self.value(w).data(),
            (n, sw[1]),
            true,
            0,
            &mut out,
            false,
        );
        if let Some(b) = b {
            if self.shape(b) != [n] {
                return Err(Error::shape("linear", self.shape(b), &[n]));
            }
            let bv = self.value(b).data();
            for row in out.chunks_mut(n) {
                row.iter_mut().zip(bv).for_each(|(o, &bb)| *o += bb);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::from_vec(&[m, n], out), Op::Linear { x, w, b }, rg))
    }

    /// Grouped cross-correlation. `x: [N, C_in, *spatial]`,
    /// `w: [C_out, C_in/groups, *kernel]` with 2 or 3 spatial axes.
    pub fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: &[usize],
        padding: &[usize],
        groups: usize,
    ) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        let rank = sx.len().saturating_sub(2);
        if !(rank == 2 || rank == 3)
            || sw.len() != sx.len()
            || stride.len() != rank
            || padding.len() != rank
        {
            return Err(Error::shape("convolve", &sx, &sw));
        }
        if sw[1] * groups != sx[1] {
            return Err(Error::invalid(
                "convolve",
                format!(
                    "input has {} channels but weight {:?} with groups={groups} expects {}",
                    sx[1],
                    sw,
                    sw[1] * groups
                ),
            ));
        }
        let lift = |v: &[usize], fill: usize| -> [usize; 3] {
            if v.len() == 2 {
                [fill, v[0], v[1]]
            } else {
                [v[0], v[1], v[2]]
            }
        };
        let geom = ConvGeometry::new(
            sx[0],
            sx[1],
            sw[0],
            groups,
            lift(&sx[2..], 1),
            lift(&sw[2..], 1),
            lift(stride, 1),
            lift(padding, 0),
        )?;
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(Error::shape("convolve", self.shape(b), &[sw[0]]));
            }
        }
        let out = kernels::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let mut shape = vec![sx[0], sw[0]];
        if rank == 3 {
            shape.push(geom.output[0]);
        }
        shape.extend_from_slice(&geom.output[1..]);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(Tensor::from_vec(&shape, out), Op::Conv { x, w, b, geom }, rg))
    }

    /// Normalizes `x` per `(group, channel)` slot and applies the per-slot
    /// affine `gamma`, `beta` (each of length `layout.slots()`).
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        layout: BnLayout,
        stats: BnStats<'_>,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let numel = layout.groups * layout.batch * layout.channels * layout.spatial;
        if self.value(x).numel() != numel {
            return Err(Error::invalid(
                "batch_stats_normalize",
                format!("input {:?} does not fit layout {layout:?}", self.shape(x)),
            ));
        }
        let slots = layout.slots();
        if self.value(gamma).numel() != slots || self.value(beta).numel() != slots {
            return Err(Error::shape(
                "batch_stats_normalize",
                self.shape(gamma),
                &[slots],
            ));
        }
        if layout.count() == 0 {
            return Err(Error::invalid("batch_stats_normalize", "zero-size reduction"));
        }
        let (eps, fixed) = match &stats {
            BnStats::Batch { eps } => (*eps, None),
            BnStats::Fixed { mean, var, eps } => {
                if mean.len() != slots || var.len() != slots {
                    return Err(Error::shape("batch_stats_normalize", &[mean.len()], &[slots]));
                }
                (*eps, Some((*mean, *var)))
            }
        };
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::invalid("batch_stats_normalize", format!("eps must be > 0, got {eps}")));
        }
        let xv = self.value(x).data();
        let (mean, var) = match fixed {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => {
                let mut sum = vec![0.0f64; slots];
                let mut sq = vec![0.0f64; slots];
                for_each_slot_run(layout, |slot, start| {
                    for &v in &xv[start..start + layout.spatial] {
                        let v = v.as_f64();
                        sum[slot] += v;
                        sq[slot] += v * v;
                    }
                });
                let cnt = layout.count() as f64;
                let mean: Vec<f64> = sum.iter().map(|s| s / cnt).collect();
                // Two-pass variance for accuracy.
                let mut var = vec![0.0f64; slots];
                for_each_slot_run(layout, |slot, start| {
                    let m = mean[slot];
                    for &v in &xv[start..start + layout.spatial] {
                        let d = v.as_f64() - m;
                        var[slot] += d * d;
                    }
                });
                var.iter_mut().for_each(|v| *v /= cnt);
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![S::zero(); numel];
        let mut out = vec![S::zero(); numel];
        for_each_slot_run(layout, |slot, start| {
            let m = mean[slot];
            let is = inv_std[slot];
            let gg = gv[slot].as_f64();
            let bb = bv[slot].as_f64();
            for i in start..start + layout.spatial {
                let h = (xv[i].as_f64() - m) * is;
                xhat[i] = S::of(h);
                out[i] = S::of(gg * h + bb);
            }
        });
        let moments = fixed.is_none().then(|| BatchMoments {
            mean: mean.clone(),
            var: var.clone(),
            count: layout.count(),
        });
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let node = self.push(
            Tensor::from_vec(&shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats: fixed.is_none(),
            },
            rg,
        );
        Ok((node, moments))
    }

    /// Multi-step spiking neuron over `x: [steps, ...]` starting from membrane
    /// `v0`. Returns the spike tensor and the final membrane potential.
    pub fn spike(
        &mut self,
        x: Var,
        a: Option<Var>,
        params: NeuronParams,
        v0: Vec<S>,
    ) -> Result<(Var, Vec<S>)> {
        let shape = self.shape(x).to_vec();
        let steps = shape[0];
        let per_step = self.value(x).numel() / steps;
        if v0.len() != per_step {
            return Err(Error::shape("neuron_step", &[v0.len()], &shape[1..]));
        }
        if !self.value(x).is_finite() {
            return Err(Error::NonFinite("neuron input".into()));
        }
        let kappa = match a {
            Some(a) => neuron::sigmoid(self.value(a).item().as_f64()),
            None => 1.0 / params.tau,
        };
        let (spikes, h, v_final) =
            neuron::forward_sequence(self.value(x).data(), steps, &v0, kappa, &params);
        let rg = self.rg(x) || a.is_some_and(|a| self.rg(a));
        let node = self.push(
            Tensor::from_vec(&shape, spikes),
            Op::Spike {
                x,
                a,
                params,
                steps,
                v0,
                h,
                kappa,
            },
            rg,
        );
        Ok((node, v_final))
    }

    /// Mean softmax cross-entropy of `logits: [B, K]` against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(Error::shape("cross_entropy", &s, &[labels.len()]));
        }
        let (b, k) = (s[0], s[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::invalid(
                "cross_entropy",
                format!("label {bad} out of range for {k} classes"),
            ));
        }
        let z = self.value(logits).data();
        let mut probs = vec![0.0; b * k];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &z[i * k..][..k];
            let mx = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let se: f64 = row.iter().map(|v| (v.as_f64() - mx).exp()).sum();
            let lse = mx + se.ln();
            for j in 0..k {
                probs[i * k + j] = (row[j].as_f64() - lse).exp();
            }
            loss += lse - row[labels[i]].as_f64();
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(S::of(loss / b as f64)),
            Op::CrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Records an externally computed value with a user-supplied backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor<S>,
        rule: Box<dyn CustomBackward<S>>,
    ) -> Var {
        let rg = inputs.iter().any(|&v| self.rg(v));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
            rg,
        )
    }

    /// Back-propagates from a scalar `loss`. The tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Backward("tape already consumed by a previous backward".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gy) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, &gy, &mut grads);
            if matches!(self.nodes[id].op, Op::Leaf) {
                grads[id] = Some(gy);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, id: usize, gy: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[id];
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if rg(*a) {
                    add_into(&mut grads[a.0], gy.to_vec());
                }
                if rg(*b) {
                    add_into(&mut grads[b.0], gy.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if rg(*a) {
                    add_into(&mut grads[a.0], gy.to_vec());
                }
                if rg(*b) {
                    add_into(&mut grads[b.0], gy.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let g = gy.iter().zip(val(*b).data()).map(|(&g, &y)| g * y).collect();
                    add_into(&mut grads[a.0], g);
                }
                if rg(*b) {
                    let g = gy.iter().zip(val(*a).data()).map(|(&g, &x)| g * x).collect();
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Scale(a, f) => {
                add_into(&mut grads[a.0], gy.iter().map(|&g| g * *f).collect());
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], gy.to_vec()),
            Op::Permute(a, axes) => {
                let gt = Tensor::from_vec(node.value.shape(), gy.to_vec());
                let back = gt
                    .permute(&inverse_permutation(axes))
                    .expect("inverse permutation is valid");
                add_into(&mut grads[a.0], back.into_data());
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let d = val(v).shape()[*axis] * inner;
                    if rg(v) {
                        let mut g = Vec::with_capacity(outer * d);
                        for o in 0..outer {
                            g.extend_from_slice(&gy[o * total + offset..][..d]);
                        }
                        add_into(&mut grads[v.0], g);
                    }
                    offset += d;
                }
            }
            Op::Mean(a) => {
                let n = val(*a).numel();
                let g = gy[0] / S::of(n as f64);
                add_into(&mut grads[a.0], vec![g; n]);
            }
            Op::Sum(a) => {
                add_into(&mut grads[a.0], vec![gy[0]; val(*a).numel()]);
            }
            Op::MatMul {
                a,
                b,
                a_t,
                b_t,
                batch,
                a_broadcast,
                b_broadcast,
            } => {
                let sa = val(*a).shape();
                let sb = val(*b).shape();
                let (ar, ac) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let (br, bc) = (sb[sb.len() - 2], sb[sb.len() - 1]);
                let m = if *a_t { ac } else { ar };
                let n = if *b_t { br } else { bc };
                let c_stride = m * n;
                if rg(*a) {
                    // dA_stored = dC @ op(B)^T   (or its transpose when A is stored transposed)
                    let mut da = vec![S::zero(); val(*a).numel()];
                    let reps = if *a_broadcast { *batch } else { 1 };
                    let inner_batch = if *a_broadcast { 1 } else { *batch };
                    for r in 0..reps {
                        let gy_r = &gy[r * c_stride..];
                        let b_r = &val(*b).data()[if *b_broadcast { 0 } else { r * br * bc }..];
                        let gy_stride = if *a_broadcast { 0 } else { c_stride };
                        let b_stride = if *b_broadcast { 0 } else { br * bc };
                        if !*a_t {
                            // dA[m,k] = dC[m,n] @ op(B)^T[n,k]
                            kernels::batched_matmul(
                                inner_batch, gy_r, (m, n), false, gy_stride, b_r, (br, bc), !*b_t,
                                b_stride, &mut da, *a_broadcast,
                            );
                        } else {
                            // A stored [k,m]: dA = op(B) @ dC^T
                            kernels::batched_matmul(
                                inner_batch, b_r, (br, bc), *b_t, b_stride, gy_r, (m, n), true,
                                gy_stride, &mut da, *a_broadcast,
                            );
                        }
                    }
                    add_into(&mut grads[a.0], da);
                }
                if rg(*b) {
                    let mut db = vec![S::zero(); val(*b).numel()];
                    let reps = if *b_broadcast { *batch } else { 1 };
                    let inner_batch = if *b_broadcast { 1 } else { *batch };
                    for r in 0..reps {
                        let gy_r = &gy[r * c_stride..];
                        let a_r = &val(*a).data()[if *a_broadcast { 0 } else { r * ar * ac }..];
                        let gy_stride = if *b_broadcast { 0 } else { c_stride };
                        let a_stride = if *a_broadcast { 0 } else { ar * ac };
                        if !*b_t {
                            // dB[k,n] = op(A)^T[k,m] @ dC[m,n]
                            kernels::batched_matmul(
                                inner_batch, a_r, (ar, ac), !*a_t, a_stride, gy_r, (m, n), false,
                                gy_stride, &mut db, *b_broadcast,
                            );
                        } else {
                            // B stored [n,k]: dB = dC^T @ op(A)
                            kernels::batched_matmul(
                                inner_batch, gy_r, (m, n), true, gy_stride, a_r, (ar, ac), *a_t,
                                a_stride, &mut db, *b_broadcast,
                            );
                        }
                    }
                    add_into(&mut grads[b.0], db);
                }
            }
            Op::Linear { x, w, b } => {
                let sx = val(*x).shape();
                let sw = val(*w).shape();
                let (m, k, n) = (sx[0], sx[1], sw[0]);
                if rg(*x) {
                    let mut dx = vec![S::zero(); m * k];
                    kernels::batched_matmul(1, gy, (m, n), false, 0, val(*w).data(), (n, k), false, 0, &mut dx, false);
                    add_into(&mut grads[x.0], dx);
                }
                if rg(*w) {
                    let mut dw = vec![S::zero(); n * k];
                    kernels::batched_matmul(1, gy, (m, n), true, 0, val(*x).data(), (m, k), false, 0, &mut dw, false);
                    add_into(&mut grads[w.0], dw);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let mut db = vec![0.0f64; n];
                        for row in gy.chunks(n) {
                            db.iter_mut().zip(row).for_each(|(d, g)| *d += g.as_f64());
                        }
                        add_into(&mut grads[b.0], db.into_iter().map(S::of).collect());
                    }
                }
            }
            Op::Conv { x, w, b, geom } => {
                let (dx, dw) = kernels::conv_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    gy,
                    rg(*x),
                    rg(*w),
                );
                if let Some(dx) = dx {
                    add_into(&mut grads[x.0], dx);
                }
                if let Some(dw) = dw {
                    add_into(&mut grads[w.0], dw);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        add_into(&mut grads[b.0], kernels::conv_bias_grad(geom, gy));
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                layout,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let slots = layout.slots();
                let mut sum_dy = vec![0.0f64; slots];
                let mut sum_dy_xhat = vec![0.0f64; slots];
                for_each_slot_run(*layout, |slot, start| {
                    for i in start..start + layout.spatial {
                        let g = gy[i].as_f64();
                        sum_dy[slot] += g;
                        sum_dy_xhat[slot] += g * xhat[i].as_f64();
                    }
                });
                if rg(*gamma) {
                    add_into(&mut grads[gamma.0], sum_dy_xhat.iter().map(|&v| S::of(v)).collect());
                }
                if rg(*beta) {
                    add_into(&mut grads[beta.0], sum_dy.iter().map(|&v| S::of(v)).collect());
                }
                if rg(*x) {
                    let gv = val(*gamma).data();
                    let cnt = layout.count() as f64;
                    let mut dx = vec![S::zero(); xhat.len()];
                    for_each_slot_run(*layout, |slot, start| {
                        let scale = gv[slot].as_f64() * inv_std[slot];
                        if *batch_stats {
                            let md = sum_dy[slot] / cnt;
                            let mdx = sum_dy_xhat[slot] / cnt;
                            for i in start..start + layout.spatial {
                                dx[i] = S::of(scale * (gy[i].as_f64() - md - xhat[i].as_f64() * mdx));
                            }
                        } else {
                            for i in start..start + layout.spatial {
                                dx[i] = S::of(scale * gy[i].as_f64());
                            }
                        }
                    });
                    add_into(&mut grads[x.0], dx);
                }
            }
            Op::Spike {
                x,
                a,
                params,
                steps,
                v0,
                h,
                kappa,
            } => {
                let (dx, dkappa) = neuron::backward_sequence(
                    val(*x).data(),
                    h,
                    v0,
                    *steps,
                    *kappa,
                    params,
                    gy,
                );
                if rg(*x) {
                    add_into(&mut grads[x.0], dx);
                }
                if let Some(a) = a {
                    if rg(*a) {
                        let da = dkappa * kappa * (1.0 - kappa);
                        add_into(&mut grads[a.0], vec![S::of(da)]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let b = labels.len();
                let k = probs.len() / b;
                let scale = gy[0].as_f64() / b as f64;
                let mut g: Vec<S> = probs.iter().map(|&p| S::of(p * scale)).collect();
                for (i, &l) in labels.iter().enumerate() {
                    g[i * k + l] -= S::of(scale);
                }
                add_into(&mut grads[logits.0], g);
            }
            Op::Custom { inputs, rule } => {
                let ins: Vec<&Tensor<S>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = rule.backward(&ins, &node.value, gy);
                for (&v, g) in inputs.iter().zip(gs) {
                    if let (true, Some(g)) = (rg(v), g) {
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
        }
    }
}

/// Calls `f(slot, start)` for every contiguous spatial run of a BN layout.
fn for_each_slot_run(layout: BnLayout, mut f: impl FnMut(usize, usize)) {
    for g in 0..layout.groups {
        for b in 0..layout.batch {
            for c in 0..layout.channels {
                let start = ((g * layout.batch + b) * layout.channels + c) * layout.spatial;
                f(g * layout.channels + c, start);
            }
        }
    }
}

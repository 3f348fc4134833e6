//! Leaky integrate-and-fire neurons with optional trainable time constant.
//!
//! Charge:  `H[t] = V[t-1] + k * (X[t] - (V[t-1] - V_reset))`
//! Fire:    `S[t] = Θ(H[t] - V_th)`
//! Reset:   `V[t] = H[t] * (1 - S[t]) + V_reset * S[t]`
//!
//! `k = 1/τ` for LIF and `k = sigmoid(a)` for PLIF. Backward replaces
//! `dΘ/dH` with the derivative of `sigmoid(α (H - V_th))`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Lif,
    Plif,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuronConfig {
    pub kind: NeuronKind,
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Fixed membrane time constant of LIF neurons.
    pub tau: f64,
    /// Initial value of the PLIF parameter `a` (τ = 1 / sigmoid(a)).
    pub a_init: f64,
    pub surrogate_alpha: f64,
    /// Treat the spike as a constant inside the reset term during backward.
    pub detach_reset: bool,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            kind: NeuronKind::Plif,
            v_threshold: 1.0,
            v_reset: 0.0,
            tau: 2.0,
            a_init: 0.0,
            surrogate_alpha: 4.0,
            detach_reset: false,
        }
    }
}

impl NeuronConfig {
    pub fn lif(tau: f64) -> Self {
        Self {
            kind: NeuronKind::Lif,
            tau,
            ..Self::default()
        }
    }

    pub fn plif(a_init: f64) -> Self {
        Self {
            kind: NeuronKind::Plif,
            a_init,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == NeuronKind::Lif && !(self.tau > 1.0) {
            return Err(Error::invalid("neuron", format!("tau must be > 1, got {}", self.tau)));
        }
        if !(self.v_threshold > self.v_reset) {
            return Err(Error::invalid("neuron", "v_threshold must exceed v_reset"));
        }
        if !(self.surrogate_alpha > 0.0) {
            return Err(Error::invalid("neuron", "surrogate_alpha must be > 0"));
        }
        if !self.a_init.is_finite() {
            return Err(Error::invalid("neuron", "a_init must be finite"));
        }
        Ok(())
    }

    /// Leak factor `k`: `1/τ` for LIF, `sigmoid(a)` for PLIF.
    pub fn kappa(&self, a: Option<f64>) -> f64 {
        match self.kind {
            NeuronKind::Lif => 1.0 / self.tau,
            NeuronKind::Plif => sigmoid(a.unwrap_or(self.a_init)),
        }
    }

    pub fn params(&self, smooth: bool) -> NeuronParams {
        NeuronParams {
            v_threshold: self.v_threshold,
            v_reset: self.v_reset,
            tau: self.tau,
            alpha: self.surrogate_alpha,
            detach_reset: self.detach_reset,
            smooth,
        }
    }
}

/// Scalar parameters consumed by the sequence kernels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronParams {
    pub v_threshold: f64,
    pub v_reset: f64,
    pub tau: f64,
    pub alpha: f64,
    pub detach_reset: bool,
    /// Replace Θ by its sigmoid surrogate in the forward pass as well, which
    /// makes the whole network smooth for finite-difference checks.
    pub smooth: bool,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Membrane time constant implied by a PLIF parameter.
pub fn tau_from_a(a: f64) -> f64 {
    1.0 / sigmoid(a)
}

/// Membrane time constant of a neuron layer: the fixed τ for LIF, or
/// `1/sigmoid(a)` for a PLIF layer with learned `a`.
pub fn effective_tau(cfg: &NeuronConfig, a: Option<f64>) -> f64 {
    match cfg.kind {
        NeuronKind::Lif => cfg.tau,
        NeuronKind::Plif => tau_from_a(a.unwrap_or(cfg.a_init)),
    }
}

/// `dS/dH` of the sigmoid surrogate at membrane value `h`.
pub fn surrogate_derivative(h: f64, v_threshold: f64, alpha: f64) -> f64 {
    let s = sigmoid(alpha * (h - v_threshold));
    alpha * s * (1.0 - s)
}

/// Elementwise surrogate derivative over a tensor of pre-threshold membranes.
pub fn surrogate_grad<S: Scalar>(h: &Tensor<S>, cfg: &NeuronConfig) -> Tensor<S> {
    h.map(|v| S::of(surrogate_derivative(v.as_f64(), cfg.v_threshold, cfg.surrogate_alpha)))
}

#[inline]
fn fire<S: Scalar>(h: S, p: &NeuronParams) -> S {
    if p.smooth {
        S::of(sigmoid(p.alpha * (h.as_f64() - p.v_threshold)))
    } else if h >= S::of(p.v_threshold) {
        S::one()
    } else {
        S::zero()
    }
}

/// One membrane update for a single element. Returns `(H, S, V')`.
#[inline]
pub fn lif_update<S: Scalar>(v: S, x: S, kappa: S, p: &NeuronParams) -> (S, S, S) {
    let vr = S::of(p.v_reset);
    let h = v + kappa * (x - (v - vr));
    let s = fire(h, p);
    let v_next = h * (S::one() - s) + vr * s;
    (h, s, v_next)
}

/// Runs `steps` updates over `x: [steps, M]` from membrane `v0: [M]`.
/// Returns spikes, pre-threshold membranes `H` and the final membrane.
pub fn forward_sequence<S: Scalar>(
    x: &[S],
    steps: usize,
    v0: &[S],
    kappa: f64,
    p: &NeuronParams,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let m = v0.len();
    let k = S::of(kappa);
    let mut v = v0.to_vec();
    let mut spikes = vec![S::zero(); x.len()];
    let mut hs = vec![S::zero(); x.len()];
    for t in 0..steps {
        let xs = &x[t * m..][..m];
        let ss = &mut spikes[t * m..][..m];
        let hh = &mut hs[t * m..][..m];
        for i in 0..m {
            let (h, s, vn) = lif_update(v[i], xs[i], k, p);
            hh[i] = h;
            ss[i] = s;
            v[i] = vn;
        }
    }
    (spikes, hs, v)
}

/// Backpropagation through time for [`forward_sequence`]. Returns `dL/dX`
/// and `dL/dk` given `dL/dS` for every step.
pub fn backward_sequence<S: Scalar>(
    x: &[S],
    h: &[S],
    v0: &[S],
    steps: usize,
    kappa: f64,
    p: &NeuronParams,
    grad_spikes: &[S],
) -> (Vec<S>, f64) {
    let m = v0.len();
    let vr = p.v_reset;
    let mut dx = vec![S::zero(); x.len()];
    let mut dv_next = vec![0.0f64; m];
    let mut dkappa = 0.0f64;
    for t in (0..steps).rev() {
        for i in 0..m {
            let idx = t * m + i;
            let hv = h[idx].as_f64();
            let s = fire(h[idx], p).as_f64();
            let sg = surrogate_derivative(hv, p.v_threshold, p.alpha);
            let mut dv_dh = 1.0 - s;
            if !p.detach_reset {
                dv_dh += (vr - hv) * sg;
            }
            let dh = grad_spikes[idx].as_f64() * sg + dv_next[i] * dv_dh;
            dx[idx] = S::of(kappa * dh);
            let v_prev = if t == 0 {
                v0[i].as_f64()
            } else {
                let hp = h[idx - m];
                let sp = fire(hp, p);
                (hp * (S::one() - sp) + S::of(vr) * sp).as_f64()
            };
            dkappa += dh * (x[idx].as_f64() - v_prev + vr);
            dv_next[i] = (1.0 - kappa) * dh;
        }
    }
    (dx, dkappa)
}

/// Tensor whose elements are all 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTensor<S: Scalar = f32>(Tensor<S>);

impl<S: Scalar> SpikeTensor<S> {
    pub fn new(t: Tensor<S>) -> Result<Self> {
        if !t.is_binary() {
            return Err(Error::invalid("spike_tensor", "values must be 0 or 1"));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<S> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<S> {
        self.0
    }

    pub fn firing_rate(&self) -> f64 {
        self.0.count_nonzero() as f64 / self.0.numel() as f64
    }
}

/// Per-layer membrane potential carried across time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct MembraneState<S: Scalar = f32> {
    pub v: Tensor<S>,
    pub t: usize,
    v_reset: f64,
}

impl<S: Scalar> MembraneState<S> {
    pub fn new(shape: &[usize], v_reset: f64) -> Self {
        Self {
            v: Tensor::full(shape, S::of(v_reset)),
            t: 0,
            v_reset,
        }
    }

    /// Sets `V = V_reset` everywhere and rewinds the step counter.
    pub fn reset(&mut self) {
        let vr = S::of(self.v_reset);
        self.v.data_mut().iter_mut().for_each(|v| *v = vr);
        self.t = 0;
    }
}

/// Advances a neuron layer by one step. `a` overrides `cfg.a_init` for PLIF.
pub fn neuron_step<S: Scalar>(
    state: &mut MembraneState<S>,
    x_t: &Tensor<S>,
    cfg: &NeuronConfig,
    a: Option<f64>,
) -> Result<SpikeTensor<S>> {
    if x_t.shape() != state.v.shape() {
        return Err(Error::shape("neuron_step", x_t.shape(), state.v.shape()));
    }
    if !x_t.is_finite() {
        return Err(Error::NonFinite("neuron_step input".into()));
    }
    let p = cfg.params(false);
    let k = S::of(cfg.kappa(a));
    let mut out = vec![S::zero(); x_t.numel()];
    for ((v, &x), s) in state.v.data_mut().iter_mut().zip(x_t.data()).zip(out.iter_mut()) {
        let (_, spike, vn) = lif_update(*v, x, k, &p);
        *v = vn;
        *s = spike;
    }
    state.t += 1;
    Ok(SpikeTensor(Tensor::from_vec(x_t.shape(), out)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lif_single_step_example() {
        let cfg = NeuronConfig::lif(2.0);
        let p = cfg.params(false);
        let (h, s, v) = lif_update(0.0f64, 2.0, 0.5, &p);
        assert_eq!((h, s, v), (1.0, 1.0, 0.0));
    }

    #[test]
    fn subthreshold_geometric_approach() {
        let cfg = NeuronConfig::lif(2.0);
        let mut st = MembraneState::<f64>::new(&[1], 0.0);
        let x = Tensor::from_f64(&[1], &[0.4]);
        let mut prev = 0.0;
        let mut expected = vec![0.2, 0.3, 0.35];
        expected.reverse();
        for step in 0..50 {
            let s = neuron_step(&mut st, &x, &cfg, None).unwrap();
            assert_eq!(s.tensor().item(), 0.0);
            let v = st.v.item();
            if let Some(e) = expected.pop() {
                assert!((v - e).abs() < 1e-15, "step {step}: {v}");
            }
            assert!(v > prev && v < 0.4);
            prev = v;
        }
        assert!((prev - 0.4).abs() < 1e-12);
    }

    #[test]
    fn plif_at_zero_matches_lif_tau_two() {
        let lif = NeuronConfig::lif(2.0);
        let plif = NeuronConfig::plif(0.0);
        assert_eq!(lif.kappa(None), plif.kappa(None));
        assert_eq!(effective_tau(&plif, Some(0.0)), 2.0);
    }

    #[test]
    fn effective_tau_grows_for_negative_a() {
        let cfg = NeuronConfig::plif(0.0);
        assert!(effective_tau(&cfg, Some(-30.0)) > 1e12);
        assert_eq!(effective_tau(&NeuronConfig::lif(3.5), Some(-1.0)), 3.5);
    }

    #[test]
    fn surrogate_peak_and_tails() {
        let cfg = NeuronConfig::default();
        let h = Tensor::<f64>::from_f64(&[3], &[1.0, 1e6, -1e6]);
        let g = surrogate_grad(&h, &cfg);
        assert!((g.data()[0] - cfg.surrogate_alpha / 4.0).abs() < 1e-12);
        assert!(g.data()[1].abs() < 1e-300 && g.data()[2].abs() < 1e-300);
    }

    #[test]
    fn surrogate_matches_finite_difference_of_sigmoid() {
        let (vth, alpha) = (1.0, 4.0);
        for &h in &[-0.5, 0.3, 0.9, 1.0, 1.2, 2.5] {
            let step = 1e-5;
            let f = |v: f64| sigmoid(alpha * (v - vth));
            let fd = (f(h + step) - f(h - step)) / (2.0 * step);
            let an = surrogate_derivative(h, vth, alpha);
            assert!(((fd - an) / an).abs() < 1e-6, "h={h}: {fd} vs {an}");
        }
    }

    #[test]
    fn reset_restores_v_reset() {
        let cfg = NeuronConfig::lif(2.0);
        let mut st = MembraneState::<f32>::new(&[4], 0.0);
        let x = Tensor::from_vec(&[4], vec![0.3, 0.9, 1.7, 5.0]);
        neuron_step(&mut st, &x, &cfg, None).unwrap();
        st.reset();
        assert!(st.v.data().iter().all(|&v| v == 0.0));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn step_rejects_shape_and_nan() {
        let cfg = NeuronConfig::default();
        let mut st = MembraneState::<f32>::new(&[2], 0.0);
        assert!(neuron_step(&mut st, &Tensor::zeros(&[3]), &cfg, None).is_err());
        let bad = Tensor::from_vec(&[2], vec![f32::NAN, 0.0]);
        assert!(neuron_step(&mut st, &bad, &cfg, None).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig::lif(1.0).validate().is_err());
        let mut c = NeuronConfig::default();
        c.v_reset = 2.0;
        assert!(c.validate().is_err());
        c = NeuronConfig::default();
        c.surrogate_alpha = 0.0;
        assert!(c.validate().is_err());
        assert!(NeuronConfig::default().validate().is_ok());
    }
}

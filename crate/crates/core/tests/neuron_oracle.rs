mod common;

use proptest::prelude::*;
use rand::Rng;
use svformer_core::neuron::{
    forward_sequence, neuron_step, surrogate_derivative, MembraneState, NeuronConfig, NeuronKind,
};
use svformer_core::{Graph, Tensor};

struct Scenario {
    tau: f64,
    vth: f64,
    vr: f64,
    steps: usize,
    m: usize,
    x: Vec<f64>,
}

fn scenario(rng: &mut impl Rng) -> Scenario {
    let tau = rng.random_range(1.05..10.0);
    let vth = rng.random_range(0.2..2.0);
    let vr = rng.random_range(-0.5..0.1);
    let steps = rng.random_range(1..=16);
    let m = rng.random_range(1..=8);
    let x = (0..steps * m).map(|_| rng.random_range(-1.0..4.0)).collect();
    Scenario { tau, vth, vr, steps, m, x }
}

fn column(s: &Scenario, i: usize) -> Vec<f64> {
    (0..s.steps).map(|t| s.x[t * s.m + i]).collect()
}

fn run_steps(s: &Scenario, cfg: &NeuronConfig, a: Option<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut st = MembraneState::<f64>::new(&[s.m], s.vr);
    let (mut spikes, mut mem) = (Vec::new(), Vec::new());
    for t in 0..s.steps {
        let x = Tensor::from_vec(&[s.m], s.x[t * s.m..][..s.m].to_vec());
        let out = neuron_step(&mut st, &x, cfg, a).unwrap();
        spikes.extend_from_slice(out.tensor().data());
        mem.extend_from_slice(st.v.data());
    }
    (spikes, mem)
}

#[test]
fn step_matches_scalar_recurrence_over_1000_scenarios() {
    let mut rng = common::rng(1);
    for _ in 0..1000 {
        let s = scenario(&mut rng);
        let cfg = NeuronConfig {
            v_threshold: s.vth,
            v_reset: s.vr,
            ..NeuronConfig::lif(s.tau)
        };
        let (spikes, mem) = run_steps(&s, &cfg, None);
        for i in 0..s.m {
            let (os, ov) = common::lif_oracle(&column(&s, i), s.tau, s.vth, s.vr);
            for t in 0..s.steps {
                assert_eq!(spikes[t * s.m + i], os[t]);
                assert_eq!(mem[t * s.m + i], ov[t]);
            }
        }
    }
}

#[test]
fn plif_equals_lif_at_matching_a() {
    let mut rng = common::rng(2);
    for _ in 0..1000 {
        let s = scenario(&mut rng);
        let lif = NeuronConfig {
            v_threshold: s.vth,
            v_reset: s.vr,
            ..NeuronConfig::lif(s.tau)
        };
        let a = -(s.tau - 1.0).ln();
        let plif = NeuronConfig {
            kind: NeuronKind::Plif,
            ..lif.clone()
        };
        let (s1, v1) = run_steps(&s, &lif, None);
        let (s2, v2) = run_steps(&s, &plif, Some(a));
        assert_eq!(s1, s2);
        for (a, b) in v1.iter().zip(&v2) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn sequence_kernel_and_graph_op_match_single_steps() {
    let mut rng = common::rng(3);
    for _ in 0..100 {
        let s = scenario(&mut rng);
        let cfg = NeuronConfig {
            v_threshold: s.vth,
            v_reset: s.vr,
            ..NeuronConfig::lif(s.tau)
        };
        let (spikes, mem) = run_steps(&s, &cfg, None);
        let p = cfg.params(false);
        let (seq, _, v_final) = forward_sequence(&s.x, s.steps, &vec![s.vr; s.m], cfg.kappa(None), &p);
        assert_eq!(seq, spikes);
        assert_eq!(v_final, mem[(s.steps - 1) * s.m..].to_vec());

        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_vec(&[s.steps, s.m], s.x.clone()));
        let (y, v) = g.spike(x, None, p, vec![s.vr; s.m]).unwrap();
        assert_eq!(g.value(y).data(), &spikes[..]);
        assert_eq!(v, v_final);
    }
}

#[test]
fn surrogate_peak_is_alpha_over_four() {
    for alpha in [0.5, 1.0, 2.0, 4.0, 10.0] {
        for vth in [0.3, 1.0, 1.7] {
            assert!((surrogate_derivative(vth, vth, alpha) - alpha / 4.0).abs() < 1e-8);
        }
    }
}

#[test]
fn backward_uses_surrogate_at_single_step() {
    // one step from V = Vr = 0: H = X / tau, dS/dX = sigma'(H) / tau
    let cfg = NeuronConfig::lif(2.0);
    let xs = [0.3, 1.9, 2.0, 2.4, -1.0];
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(&[1, 5], xs.to_vec()), true);
    let (y, _) = g.spike(x, None, cfg.params(false), vec![0.0; 5]).unwrap();
    let l = g.sum(y);
    g.backward(l).unwrap();
    let grad = g.grad(x).unwrap();
    for (gx, &xv) in grad.data().iter().zip(&xs) {
        let want = surrogate_derivative(xv / 2.0, 1.0, cfg.surrogate_alpha) / 2.0;
        assert!((gx - want).abs() < 1e-12, "{gx} vs {want}");
    }
}

proptest! {
    #[test]
    fn spikes_are_binary_and_reset(
        xs in proptest::collection::vec(-2.0f64..5.0, 1..40),
        tau in 1.1f64..8.0,
    ) {
        let cfg = NeuronConfig::lif(tau);
        let mut st = MembraneState::<f64>::new(&[1], 0.0);
        for &x in &xs {
            let s = neuron_step(&mut st, &Tensor::from_vec(&[1], vec![x]), &cfg, None).unwrap();
            let v = s.tensor().item();
            prop_assert!(v == 0.0 || v == 1.0);
            if v == 1.0 {
                prop_assert_eq!(st.v.item(), 0.0);
            } else {
                prop_assert!(st.v.item() < cfg.v_threshold);
            }
        }
    }

    #[test]
    fn larger_tau_leaks_slower(x in 0.01f64..0.5, t1 in 1.1f64..4.0, dt in 0.1f64..4.0) {
        // constant subthreshold drive: V_t = x (1 - (1 - 1/tau)^t) increases with 1/tau
        let run = |tau: f64| {
            let cfg = NeuronConfig::lif(tau);
            let mut st = MembraneState::<f64>::new(&[1], 0.0);
            neuron_step(&mut st, &Tensor::from_vec(&[1], vec![x]), &cfg, None).unwrap();
            st.v.item()
        };
        prop_assert!(run(t1) > run(t1 + dt));
    }
}

mod common;

use common::{brute_force_acs, run_layer, spikes, uniform, EnvParts, Window};
use rand::Rng;
use svformer_core::blocks::{BlockConfig, Ssa};
use svformer_core::energy::{estimate_sops, exact_conv_acs, exact_matmul_acs, profile, EnergyModel};
use svformer_core::layers::{ConvSpec, NormMode};
use svformer_core::params::ParamStore;
use svformer_core::train::{train_step, AdamW, TrainConfig};
use svformer_core::{Model, ModelConfig, NeuronConfig, Probe, Tensor};

fn firing_rate(x: &Tensor<f32>) -> f64 {
    x.count_nonzero() as f64 / x.numel() as f64
}

#[test]
fn reference_aggregate_energy() {
    let m = EnergyModel::default();
    let snn = m.total_energy(20.760e9, 0.700e9) * 1e3;
    let ann = m.ann_energy(229.163e9) * 1e3;
    assert!((snn - 21.904).abs() < 1e-3, "{snn}");
    assert!((ann - 1054.148).abs() < 1e-2, "{ann}");
    assert!((snn / ann - 0.0208).abs() < 5e-4);
}

#[test]
fn exact_conv_count_matches_enumeration() {
    let mut rng = common::rng(20);
    for _ in 0..100 {
        let groups = [1, 2][rng.random_range(0..2)];
        let cin = groups * rng.random_range(1..=3);
        let cout = groups * rng.random_range(1..=3);
        let k = [1, 3, 5][rng.random_range(0..3)];
        let spec = ConvSpec::square(cin, cout, k, rng.random_range(1..=2), rng.random_range(0..=k / 2), groups);
        let hw = rng.random_range(k..k + 5);
        let (n, p) = (rng.random_range(1..=2), rng.random_range(0.05..0.9));
        let x = spikes::<f32>(&mut rng, &[n, cin, hw, hw], p);
        assert_eq!(exact_conv_acs(&x, &spec).unwrap(), brute_force_acs(&x, &spec));
    }
}

#[test]
fn estimate_equals_exact_for_uniform_fanout_layers() {
    // token-wise linear maps, pointwise convs and non-overlapping unpadded
    // patches read every input bit exactly C_out · taps / stride-area times
    let mut rng = common::rng(21);
    for case in 0..100 {
        let cin = rng.random_range(1..=6);
        let cout = rng.random_range(1..=6);
        let spec = match case % 3 {
            0 => ConvSpec::pointwise(cin, cout),
            1 => ConvSpec::square(cin, cout, 2, 2, 0, 1),
            _ => ConvSpec::square(cin, cout, 3, 3, 0, 1),
        };
        let k = spec.kernel[0];
        let hw = k * rng.random_range(1..=4);
        let (n, p) = (rng.random_range(1..=3), rng.random_range(0.0..1.0));
        let x = spikes::<f32>(&mut rng, &[n, cin, hw, hw], p);
        let flops = spec.flops(&[hw, hw]).unwrap() as f64 * x.shape()[0] as f64;
        let est = estimate_sops(flops, firing_rate(&x));
        let exact = brute_force_acs(&x, &spec);
        assert!((est - exact as f64).abs() < 1e-6, "case {case}: {est} vs {exact}");
    }
}

#[test]
fn padded_conv_estimate_bills_padding_taps() {
    // fr·FLOP counts every tap of every output, including taps that fall on
    // zero padding, so on average it exceeds the exact count by the ratio of
    // all taps to in-bounds taps
    let spec = ConvSpec::square(1, 1, 3, 1, 1, 1);
    let mut corner = Tensor::<f32>::zeros(&[1, 1, 4, 4]);
    corner.data_mut()[0] = 1.0;
    let flops = spec.flops(&[4, 4]).unwrap() as f64;
    assert_eq!(exact_conv_acs(&corner, &spec).unwrap(), 4);
    assert_eq!(estimate_sops(flops, firing_rate(&corner)), 9.0);

    let in_bounds = exact_conv_acs(&Tensor::<f32>::ones(&[1, 1, 4, 4]), &spec).unwrap() as f64;
    assert_eq!(in_bounds, 100.0);
    let mut rng = common::rng(22);
    let (mut est, mut exact) = (0.0, 0.0);
    for _ in 0..2000 {
        let x = spikes::<f32>(&mut rng, &[1, 1, 4, 4], 0.5);
        est += estimate_sops(flops, firing_rate(&x));
        exact += exact_conv_acs(&x, &spec).unwrap() as f64;
    }
    let bias = flops / in_bounds;
    assert!((est / exact / bias - 1.0).abs() < 0.02, "{} vs {bias}", est / exact);
}

#[test]
fn matmul_count_matches_enumeration() {
    let mut rng = common::rng(23);
    for _ in 0..50 {
        let (m, k, n) = (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6));
        let a = spikes::<f32>(&mut rng, &[m, k], 0.4);
        let b = spikes::<f32>(&mut rng, &[k, n], 0.4);
        let mut want = 0;
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    if a.data()[i * k + p] == 1.0 && b.data()[p * n + j] == 1.0 {
                        want += 1;
                    }
                }
            }
        }
        assert_eq!(exact_matmul_acs(a.data(), b.data(), m, k, n), want);
    }
}

#[test]
fn ssa_exact_counts_respect_dense_bounds() {
    let mut rng = common::rng(24);
    for _ in 0..30 {
        let c = rng.random_range(2..=6);
        let (t, b, hw) = (rng.random_range(1..=3), rng.random_range(1..=2), rng.random_range(1..=4));
        let parts = EnvParts {
            neuron: NeuronConfig::lif(2.0),
            block: BlockConfig::default(),
            norm: NormMode::Tdbn,
            time_steps: t,
        };
        let mut store = ParamStore::<f32>::new();
        let mut ssa = Ssa::new(&mut parts.env(&mut store, &mut common::rng(1)), "ssa", c).unwrap();
        let x = uniform::<f32>(&mut rng, &[t * b, c, hw, hw], -1.0, 4.0);
        let mut probe = Probe::new().with_exact_counts().with_stored_spikes();
        run_layer(&mut store, Window::full(true, t, b), &x, Some(&mut probe), |ctx, v| ssa.forward(ctx, v)).unwrap();
        let nnz = |name: &str| -> u64 {
            probe.neuron(name).unwrap().stored.iter().map(|s| s.count_nonzero() as u64).sum()
        };
        let (nq, nk, nv) = (nnz("ssa.sn_q"), nnz("ssa.sn_k"), nnz("ssa.sn_v"));
        let kv = probe.synapse("ssa.kv").unwrap();
        let qm = probe.synapse("ssa.qm").unwrap();
        let c = c as u64;
        assert_eq!(qm.exact_acs.unwrap(), nq * c);
        assert!(kv.exact_acs.unwrap() <= nk * c);
        assert!(kv.exact_acs.unwrap() <= nv * c);
        assert!(probe.binarity_violations().is_empty());
    }
}

fn audit(model: &mut Model<f32>, clip: &Tensor<f32>, training: bool) -> Probe {
    let mut probe = Probe::new();
    if training {
        let mut g = svformer_core::Graph::new();
        let params = model.store.bind(&mut g, false);
        let x = g.constant(clip.clone());
        model
            .forward_clip(&mut g, &params, x, svformer_core::Mode::TRAIN, Some(&mut probe))
            .unwrap();
    } else {
        model.predict(clip, Some(&mut probe)).unwrap();
    }
    probe
}

#[test]
fn tiny_model_chain_heads_see_only_spikes() {
    let cfg = ModelConfig::tiny();
    let mut model = Model::<f32>::new(&cfg, 0).unwrap();
    let mut rng = common::rng(25);
    let shape = [cfg.time_steps, 4, cfg.input_channels, cfg.input_height, cfg.input_width];
    let clip = uniform::<f32>(&mut rng, &shape, 0.0, 1.0);
    // a few updates so the network is not at its symmetric init
    let tc = TrainConfig::default();
    let mut opt = AdamW::new(&tc);
    for _ in 0..3 {
        train_step(&mut model, &mut opt, &clip, &[0, 1, 2, 3], 1e-2, tc.grad_clip).unwrap();
    }
    for training in [true, false] {
        let probe = audit(&mut model, &clip, training);
        assert!(probe.binarity_violations().is_empty(), "{:?}", probe.binarity_violations());
        if training {
            assert!(probe.neurons.iter().any(|n| n.total_spikes() > 0));
        }
        for s in probe.synapses.iter().filter(|s| s.chain_head) {
            assert!(!s.mac_billed, "{} is the MAC-billed first layer", s.name);
        }
        let pe1 = probe.synapse("stage1.pe.conv").unwrap();
        assert!(pe1.mac_billed);
        let report = profile(&probe, &EnergyModel::default()).unwrap();
        assert!(report.energy_j > 0.0 && report.energy_j < report.ann_energy_j);
    }
}

#[test]
fn estimate_tracks_exact_on_model() {
    let cfg = ModelConfig::tiny();
    let mut model = Model::<f32>::new(&cfg, 1).unwrap();
    let clip = uniform::<f32>(
        &mut common::rng(26),
        &[cfg.time_steps, 2, cfg.input_channels, cfg.input_height, cfg.input_width],
        0.0,
        1.0,
    );
    let mut probe = Probe::new().with_exact_counts();
    let mut g = svformer_core::Graph::new();
    let params = model.store.bind(&mut g, false);
    let x = g.constant(clip);
    model
        .forward_clip(&mut g, &params, x, svformer_core::Mode::TRAIN, Some(&mut probe))
        .unwrap();
    let report = profile(&probe, &EnergyModel::default()).unwrap();
    for l in report.layers.iter().filter(|l| l.exact_acs.is_some()) {
        let rec = probe.synapse(&l.name).unwrap();
        let exact = l.exact_acs.unwrap();
        // linear layers have uniform fan-out
        if rec.kind == svformer_core::probe::OpKind::Linear {
            assert!((l.sops - exact).abs() <= 1e-6 * exact.max(1.0), "{}: {} vs {}", l.name, l.sops, exact);
        }
    }
}

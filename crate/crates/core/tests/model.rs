mod common;

use proptest::prelude::*;
use svformer_core::blocks::BlockConfig;
use svformer_core::checkpoint;
use svformer_core::gradcheck::{check_model, primitive_suite, GradCheckConfig};
use svformer_core::model::PeConfig;
use svformer_core::{Graph, Model, ModelConfig, NeuronConfig, NeuronKind, NormMode, Tensor};

/// Trainable parameter count from the architecture description alone.
fn expected_parameters(cfg: &ModelConfig) -> usize {
    let t = cfg.time_steps;
    let plif = usize::from(cfg.neuron.kind == NeuronKind::Plif);
    let bn = |c: usize| 2 * c * if cfg.norm_mode == NormMode::Tdbn { t } else { 1 };
    let r = cfg.block.mlp_ratio;
    let k = cfg.block.dw_kernel;
    let mlp = |c: usize| 2 * plif + c * r * c + bn(r * c) + r * c * c + bn(c);
    let lfe = |c: usize| plif + 2 * c * c + c * k * k + bn(c) + mlp(c);
    let gsa = |c: usize| 5 * plif + 4 * (c * c + bn(c)) + mlp(c);
    let n = cfg.num_stages();
    let local = cfg.local_stages.unwrap_or(if n >= 4 { 2 } else { 1 });
    let (mut h, mut w) = (cfg.input_height, cfg.input_width);
    let mut total = 0;
    let mut extents = Vec::new();
    for i in 0..n {
        let pe = cfg.pe.get(i).copied().unwrap_or_default();
        let cin = if i == 0 { cfg.input_channels } else { cfg.channels[i - 1] };
        let c = cfg.channels[i];
        total += cin * c * pe.kernel * pe.kernel + bn(c) + if i > 0 { plif } else { 0 };
        h = (h + 2 * pe.padding - pe.kernel) / pe.stride + 1;
        w = (w + 2 * pe.padding - pe.kernel) / pe.stride + 1;
        extents.push((h, w));
        let block = if i < local { lfe(c) } else { gsa(c) };
        total += cfg.stage_depths[i] * block;
    }
    let c_last = cfg.channels[n - 1];
    let mut head_c = c_last;
    if cfg.use_local_pathway && n >= 2 {
        let c3 = cfg.channels[n - 2];
        total += plif + c3 * 25 + c3 * c_last + bn(c_last);
        head_c *= 2;
    }
    total += plif + head_c * t * h * w + 2 * head_c + head_c * cfg.num_classes + cfg.num_classes;
    total
}

#[test]
fn tiny_parameter_count_matches_architecture() {
    let cfg = ModelConfig::tiny();
    assert_eq!(Model::<f32>::new(&cfg, 0).unwrap().count_parameters(), expected_parameters(&cfg));
}

#[test]
fn degenerate_model_is_patch_embedding_and_head() {
    let cfg = ModelConfig {
        stage_depths: vec![0],
        channels: vec![8],
        use_local_pathway: true,
        ..ModelConfig::tiny()
    };
    let m = Model::<f32>::new(&cfg, 0).unwrap();
    let names: Vec<&str> = m
        .store
        .entries()
        .iter()
        .filter(|e| e.trainable())
        .map(|e| e.name.as_str())
        .collect();
    assert!(names.iter().all(|n| n.starts_with("stage1.pe.") || n.starts_with("head.")), "{names:?}");
    assert_eq!(m.count_parameters(), expected_parameters(&cfg));
}

fn arb_config() -> impl Strategy<Value = ModelConfig> {
    (
        proptest::collection::vec(0usize..=2, 1..=4),
        1usize..=3,
        1usize..=3,
        any::<bool>(),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(|(depths, t, r, lp, tdbn, plif)| {
            let n = depths.len();
            let channels = (0..n).map(|i| 4 * (i + 1)).collect();
            ModelConfig {
                stage_depths: depths,
                channels,
                time_steps: t,
                input_height: 16,
                input_width: 16,
                use_local_pathway: lp,
                norm_mode: if tdbn { NormMode::Tdbn } else { NormMode::PlainBn },
                neuron: if plif { NeuronConfig::default() } else { NeuronConfig::lif(2.0) },
                block: BlockConfig {
                    mlp_ratio: r,
                    ..BlockConfig::default()
                },
                ..ModelConfig::tiny()
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn parameter_count_matches_oracle(cfg in arb_config()) {
        let m = Model::<f32>::new(&cfg, 0).unwrap();
        prop_assert_eq!(m.count_parameters(), expected_parameters(&cfg));
    }

    #[test]
    fn parameter_count_grows_with_mlp_ratio(cfg in arb_config()) {
        prop_assume!(cfg.stage_depths.iter().any(|&d| d > 0));
        let bigger = ModelConfig {
            block: BlockConfig { mlp_ratio: cfg.block.mlp_ratio + 1, ..cfg.block.clone() },
            ..cfg.clone()
        };
        let a = Model::<f32>::new(&cfg, 0).unwrap().count_parameters();
        let b = Model::<f32>::new(&bigger, 0).unwrap().count_parameters();
        prop_assert!(b > a);
    }
}

fn small_clip(cfg: &ModelConfig, batch: usize, seed: u64) -> Tensor<f32> {
    common::uniform(
        &mut common::rng(seed),
        &[cfg.time_steps, batch, cfg.input_channels, cfg.input_height, cfg.input_width],
        0.0,
        1.0,
    )
}

/// Trains a few steps so eval-mode statistics are not at their init.
fn warmed_model(cfg: &ModelConfig) -> Model<f32> {
    use svformer_core::train::{train_step, AdamW, TrainConfig};
    let mut m = Model::<f32>::new(cfg, 3).unwrap();
    let tc = TrainConfig::default();
    let mut opt = AdamW::new(&tc);
    let clip = small_clip(cfg, 4, 9);
    for _ in 0..30 {
        train_step(&mut m, &mut opt, &clip, &[0, 1, 2, 3], 1e-3, tc.grad_clip).unwrap();
    }
    m
}

#[test]
fn frame_by_frame_matches_whole_clip() {
    let cfg = ModelConfig::tiny();
    let mut m = warmed_model(&cfg);
    let clip = small_clip(&cfg, 2, 4);
    let whole = m.predict(&clip, None).unwrap();
    let per: usize = clip.numel() / cfg.time_steps;
    for windows in [vec![1; 8], vec![3, 2, 3], vec![8]] {
        m.reset();
        let mut g = Graph::new();
        let params = m.store.bind(&mut g, false);
        let mut t = 0;
        let mut out = None;
        for &w in &windows {
            let mut shape = clip.shape().to_vec();
            shape[0] = w;
            let frames = Tensor::from_vec(&shape, clip.data()[t * per..(t + w) * per].to_vec());
            let x = g.constant(frames);
            let y = m.step(&mut g, &params, x, None).unwrap();
            t += w;
            assert_eq!(y.is_some(), t == cfg.time_steps);
            out = y;
        }
        let stepped = g.value(out.unwrap()).clone();
        assert!(stepped.max_abs_diff(&whole) < 1e-5, "{windows:?}: {}", stepped.max_abs_diff(&whole));
        let extra = g.constant(Tensor::zeros(&[1, 2, 3, 32, 32]));
        assert!(m.step(&mut g, &params, extra, None).is_err());
    }
}

#[test]
fn same_seed_same_model_and_logits() {
    let cfg = ModelConfig::tiny();
    let mut a = Model::<f32>::new(&cfg, 42).unwrap();
    let mut b = Model::<f32>::new(&cfg, 42).unwrap();
    let c = Model::<f32>::new(&cfg, 43).unwrap();
    for (x, y) in a.store.entries().iter().zip(b.store.entries()) {
        assert_eq!(x.tensor, y.tensor);
    }
    assert_ne!(a.store.entries()[0].tensor, c.store.entries()[0].tensor);
    let clip = small_clip(&cfg, 2, 5);
    assert_eq!(a.predict(&clip, None).unwrap(), b.predict(&clip, None).unwrap());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = ModelConfig::tiny();
    let mut m = warmed_model(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&m, &path).unwrap();
    let mut loaded = checkpoint::load(&path).unwrap();
    let clip = small_clip(&cfg, 2, 6);
    assert_eq!(m.predict(&clip, None).unwrap(), loaded.predict(&clip, None).unwrap());
}

#[test]
fn primitive_gradients_pass() {
    for (name, r) in primitive_suite(&GradCheckConfig::default(), 1).unwrap() {
        assert!(r.passed && r.max_rel_err < 1e-4, "{name}: {:.3e}", r.max_rel_err);
    }
}

#[test]
fn composed_model_gradients_pass() {
    // finite differences on the composed network need a smaller step: the
    // loss is strongly curved along the first-layer weights once they pass
    // through normalization
    let gc = GradCheckConfig {
        step: 1e-6,
        max_per_input: Some(12),
        ..Default::default()
    };
    let names = [
        "stage1.pe.conv.weight",
        "stage2.pe.sn.a",
        "stage1.lfe1.dw.weight",
        "stage3.gsa1.ssa.q.bn.gamma",
        "lp.bn.beta",
        "head.fc.weight",
    ];
    let r = check_model(&ModelConfig::tiny(), 0, 2, &names, &gc).unwrap();
    assert!(r.passed, "{:.3e}", r.max_rel_err);
    let plain = ModelConfig {
        norm_mode: NormMode::PlainBn,
        neuron: NeuronConfig::lif(2.0),
        stage_depths: vec![1, 1],
        channels: vec![8, 16],
        pe: vec![PeConfig::default(); 2],
        ..ModelConfig::tiny()
    };
    let r = check_model(&plain, 1, 2, &["stage1.pe.conv.weight", "head.bn.gamma"], &gc).unwrap();
    assert!(r.passed, "{:.3e}", r.max_rel_err);
}

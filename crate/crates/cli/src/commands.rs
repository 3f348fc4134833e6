use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use svformer_core::checkpoint;
use svformer_core::data::{gen_moving_patterns, ClipDataset, NoiseSpec};
use svformer_core::energy::{self, EnergyReport};
use svformer_core::gradcheck::{check_model, primitive_suite, GradCheckConfig, GradCheckReport};
use svformer_core::train::{evaluate, fit, Metrics};
use svformer_core::{Error, Model, Probe, Result};

use crate::config::{NoiseConfig, RunConfig};
use crate::run::RunDir;

/// Seed offset that separates the shuffled-frame evaluation from training.
const SHUFFLE_SEED: u64 = 0x5f1e;

#[derive(Clone, Debug)]
pub struct Options {
    pub root: PathBuf,
    pub quiet: bool,
}

impl Options {
    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn load_or_generate(path: &str, seed: u64, size: usize, cfg: &RunConfig) -> Result<ClipDataset> {
    let ds = if path.is_empty() {
        gen_moving_patterns(seed, &cfg.data.pattern(&cfg.model), size)?
    } else {
        ClipDataset::load(Path::new(path))?
    };
    let m = &cfg.model;
    let want = [m.time_steps, m.input_channels, m.input_height, m.input_width];
    if ds.clip_shape() != want || ds.num_classes() != m.num_classes {
        return Err(Error::Format {
            path: PathBuf::from(if path.is_empty() { "<generated>" } else { path }),
            msg: format!(
                "clips {:?} with {} classes do not fit the model ({:?}, {} classes)",
                ds.clip_shape(),
                ds.num_classes(),
                want,
                m.num_classes
            ),
        });
    }
    Ok(ds)
}

pub fn train_set(cfg: &RunConfig) -> Result<ClipDataset> {
    load_or_generate(&cfg.data.train_path, cfg.data.seed, cfg.data.train_size, cfg)
}

pub fn test_set(cfg: &RunConfig) -> Result<ClipDataset> {
    load_or_generate(&cfg.data.test_path, cfg.data.seed.wrapping_add(1), cfg.data.test_size, cfg)
}

/// Loads `cfg.checkpoint`; the embedded model config replaces `cfg.model`.
fn load_checkpoint(cfg: &mut RunConfig) -> Result<Model<f32>> {
    if cfg.checkpoint.is_empty() {
        return Err(Error::Config(
            "checkpoint is required (set `checkpoint` or pass --checkpoint)".into(),
        ));
    }
    let model = checkpoint::load(Path::new(&cfg.checkpoint))?;
    cfg.model = model.cfg.clone();
    Ok(model)
}

/// Mean accuracy over `data.shuffle_repeats` independent frame permutations
/// of every test clip.
pub fn shuffled_accuracy(model: &mut Model<f32>, test: &ClipDataset, cfg: &RunConfig) -> Result<f64> {
    let n = cfg.data.shuffle_repeats;
    let mut total = 0.0;
    for r in 0..n as u64 {
        let shuffled = test.shuffle_frames((cfg.seed ^ SHUFFLE_SEED).wrapping_add(r));
        total += evaluate(model, &shuffled, cfg.train.batch_size, None)?;
    }
    Ok(total / n as f64)
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalRecord {
    pub top1: f64,
    pub shuffled_top1: f64,
    pub parameters: usize,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub history: Vec<Metrics>,
    pub result: FinalRecord,
    pub model: Model<f32>,
}

pub fn train(cfg: &RunConfig, opts: &Options) -> Result<TrainOutcome> {
    let train = train_set(cfg)?;
    let test = test_set(cfg)?;
    let mut model = Model::<f32>::new(&cfg.model, cfg.seed)?;
    let mut run = RunDir::create(&opts.root, "train", cfg)?;
    let ckpt_dir = run.subdir("checkpoints")?;
    opts.log(format!(
        "train: {} parameters, {} train / {} test clips -> {}",
        model.count_parameters(),
        train.len(),
        test.len(),
        run.path.display()
    ));
    let mut summary = String::from("epoch,train_loss,train_top1,top1,lr\n");
    let mut best = f64::NEG_INFINITY;
    let history = fit(&mut model, &train, &test, &cfg.train, |m, model| {
        run.emit("epoch", m)?;
        writeln!(
            summary,
            "{},{:.6},{:.6},{:.6},{:.6e}",
            m.epoch, m.train_loss, m.train_top1, m.top1, m.lr
        )
        .unwrap();
        checkpoint::save(model, &ckpt_dir.join("last.ckpt"))?;
        if m.top1 > best {
            best = m.top1;
            checkpoint::save(model, &ckpt_dir.join("best.ckpt"))?;
        }
        opts.log(format!(
            "epoch {:>3}  loss {:.4}  train {:.3}  test {:.3}  lr {:.2e}  {:.1}s",
            m.epoch, m.train_loss, m.train_top1, m.top1, m.lr, m.wall_time_s
        ));
        Ok(())
    })?;
    run.write("summary.csv", &summary)?;
    let top1 = history.last().map(|m| m.top1).unwrap_or(0.0);
    let shuffled_top1 = shuffled_accuracy(&mut model, &test, cfg)?;
    let result = FinalRecord {
        top1,
        shuffled_top1,
        parameters: model.count_parameters(),
    };
    run.emit("final", &result)?;
    opts.log(format!("final: top1 {top1:.3}, frame-shuffled top1 {shuffled_top1:.3}"));
    Ok(TrainOutcome {
        run_dir: run.path.clone(),
        history,
        result,
        model,
    })
}

pub struct EvalOutcome {
    pub run_dir: PathBuf,
    pub result: FinalRecord,
}

pub fn eval(cfg: &RunConfig, opts: &Options) -> Result<EvalOutcome> {
    let mut cfg = cfg.clone();
    let mut model = load_checkpoint(&mut cfg)?;
    let test = test_set(&cfg)?;
    let mut run = RunDir::create(&opts.root, "eval", &cfg)?;
    let batch = cfg.train.batch_size;
    let top1 = evaluate(&mut model, &test, batch, None)?;
    let shuffled_top1 = shuffled_accuracy(&mut model, &test, &cfg)?;
    let result = FinalRecord {
        top1,
        shuffled_top1,
        parameters: model.count_parameters(),
    };
    run.emit("eval", &result)?;
    opts.log(format!("eval: top1 {top1:.3}, frame-shuffled top1 {shuffled_top1:.3}"));
    Ok(EvalOutcome {
        run_dir: run.path.clone(),
        result,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergySummary {
    pub sops: f64,
    pub mac_flops: f64,
    pub ann_flops: f64,
    pub energy_mj: f64,
    pub ann_energy_mj: f64,
    /// Spiking energy as a fraction of the dense counterpart.
    pub ratio: f64,
    /// Exact accumulate events per clip over the layers fed directly by
    /// spikes, when exact counting is enabled.
    pub exact_acs_per_clip: Option<f64>,
    pub binarity_violations: u64,
}

pub struct ProfileOutcome {
    pub run_dir: PathBuf,
    pub summary: EnergySummary,
    pub report: Option<EnergyReport>,
}

/// Per-layer, per-step firing rates as CSV.
pub fn firing_rate_csv(probe: &Probe) -> String {
    let mut s = String::from("layer,stage,step,firing_rate\n");
    for n in &probe.neurons {
        for (t, r) in n.per_step_rates().iter().enumerate() {
            writeln!(s, "{},{},{},{:.6}", n.name, n.stage, t, r).unwrap();
        }
    }
    s
}

pub fn profile(cfg: &RunConfig, opts: &Options) -> Result<ProfileOutcome> {
    let p = &cfg.profile;
    if p.aggregate {
        let mut run = RunDir::create(&opts.root, "profile", cfg)?;
        let energy_j = p.energy.total_energy(p.sops, p.flops_mac);
        let ann_j = p.energy.ann_energy(p.ann_flops);
        let summary = EnergySummary {
            sops: p.sops,
            mac_flops: p.flops_mac,
            ann_flops: p.ann_flops,
            energy_mj: energy_j * 1e3,
            ann_energy_mj: ann_j * 1e3,
            ratio: energy_j / ann_j,
            exact_acs_per_clip: None,
            binarity_violations: 0,
        };
        run.write(
            "profile/energy.json",
            &serde_json::to_string_pretty(&summary).expect("summary serializes"),
        )?;
        run.emit("profile", &summary)?;
        opts.log(format!(
            "energy {:.3} mJ (ANN {:.3} mJ, {:.1}x lower)",
            summary.energy_mj,
            summary.ann_energy_mj,
            1.0 / summary.ratio
        ));
        return Ok(ProfileOutcome {
            run_dir: run.path.clone(),
            summary,
            report: None,
        });
    }
    let mut cfg = cfg.clone();
    let mut model = if cfg.checkpoint.is_empty() {
        Model::<f32>::new(&cfg.model, cfg.seed)?
    } else {
        load_checkpoint(&mut cfg)?
    };
    let data = test_set(&cfg)?.take(cfg.profile.clips);
    let mut run = RunDir::create(&opts.root, "profile", &cfg)?;
    let mut probe = Probe::new();
    if cfg.profile.exact {
        probe = probe.with_exact_counts();
    }
    let top1 = evaluate(&mut model, &data, cfg.train.batch_size, Some(&mut probe))?;
    let report = energy::profile(&probe, &cfg.profile.energy)?;
    let exact_acs_per_clip = if cfg.profile.exact {
        Some(energy::exact_ac_count(&probe)? as f64 / probe.clips as f64)
    } else {
        None
    };
    let summary = EnergySummary {
        sops: report.total_sops,
        mac_flops: report.mac_flops,
        ann_flops: report.total_flops,
        energy_mj: report.energy_mj(),
        ann_energy_mj: report.ann_energy_mj(),
        ratio: report.ratio(),
        exact_acs_per_clip,
        binarity_violations: probe.binarity_violations().iter().map(|s| s.binary_violations).sum(),
    };
    run.write("profile/layers.csv", &report.to_csv())?;
    run.write("profile/report.json", &report.to_json())?;
    run.write(
        "profile/energy.json",
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    run.write("profile/firing_rates.csv", &firing_rate_csv(&probe))?;
    let mut tau = String::from("layer,stage,tau\n");
    for (name, stage, t) in model.taus() {
        writeln!(tau, "{name},{stage},{t:.6}").unwrap();
    }
    run.write("profile/tau.csv", &tau)?;
    run.emit("profile", &summary)?;
    opts.log(format!(
        "profiled {} clips (top1 {top1:.3}): {:.4e} SOPs/clip, energy {:.4} mJ/clip, ANN {:.4} mJ/clip",
        data.len(),
        summary.sops,
        summary.energy_mj,
        summary.ann_energy_mj
    ));
    Ok(ProfileOutcome {
        run_dir: run.path.clone(),
        summary,
        report: Some(report),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NoiseRow {
    pub kind: String,
    pub level: f64,
    pub top1: f64,
}

/// Accuracy under each Gaussian level `a` and salt-and-pepper probability.
pub fn noise_table(model: &mut Model<f32>, test: &ClipDataset, noise: &NoiseConfig, batch: usize) -> Result<Vec<NoiseRow>> {
    let specs = noise
        .gaussian_levels
        .iter()
        .map(|&level| NoiseSpec::Gaussian { level, seed: noise.seed })
        .chain(noise.salt_pepper.iter().map(|&p| NoiseSpec::SaltPepper { p, seed: noise.seed }));
    let mut rows = Vec::new();
    for spec in specs {
        let top1 = evaluate(model, &spec.apply(test)?, batch, None)?;
        let (kind, level) = match spec {
            NoiseSpec::Gaussian { level, .. } => ("gaussian", level),
            NoiseSpec::SaltPepper { p, .. } => ("salt_pepper", p),
        };
        rows.push(NoiseRow {
            kind: kind.into(),
            level,
            top1,
        });
    }
    Ok(rows)
}

/// Two-row layout: Gaussian levels across, then salt-and-pepper.
pub fn format_noise_table(rows: &[NoiseRow]) -> String {
    let mut s = String::new();
    for (kind, label) in [("gaussian", "a"), ("salt_pepper", "P")] {
        let r: Vec<&NoiseRow> = rows.iter().filter(|r| r.kind == kind).collect();
        if r.is_empty() {
            continue;
        }
        write!(s, "{label:<6}").unwrap();
        for x in &r {
            write!(s, "{:>8}", x.level).unwrap();
        }
        write!(s, "\n{:<6}", "top1").unwrap();
        for x in &r {
            write!(s, "{:>8.2}", 100.0 * x.top1).unwrap();
        }
        s.push('\n');
    }
    s
}

pub struct NoiseOutcome {
    pub run_dir: PathBuf,
    pub rows: Vec<NoiseRow>,
}

pub fn noise_eval(cfg: &RunConfig, opts: &Options) -> Result<NoiseOutcome> {
    let mut cfg = cfg.clone();
    let mut model = load_checkpoint(&mut cfg)?;
    let test = test_set(&cfg)?;
    let mut run = RunDir::create(&opts.root, "noise-eval", &cfg)?;
    let rows = noise_table(&mut model, &test, &cfg.noise, cfg.train.batch_size)?;
    let mut csv = String::from("kind,level,top1\n");
    for r in &rows {
        writeln!(csv, "{},{},{:.6}", r.kind, r.level, r.top1).unwrap();
        run.emit("noise", r)?;
    }
    run.write("noise/table.csv", &csv)?;
    let table = format_noise_table(&rows);
    run.write("noise/table.txt", &table)?;
    opts.log(table);
    Ok(NoiseOutcome {
        run_dir: run.path.clone(),
        rows,
    })
}

/// Parameters perturbed in the whole-model check, where present.
pub const MODEL_CHECK_PARAMS: &[&str] = &[
    "stage1.pe.conv.weight",
    "stage2.pe.sn.a",
    "stage1.lfe1.dw.weight",
    "stage3.gsa1.ssa.q.bn.gamma",
    "lp.bn.beta",
    "head.fc.weight",
];

#[derive(Clone, Debug, Serialize)]
pub struct NamedReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    pub passed: bool,
}

pub struct GradcheckOutcome {
    pub run_dir: PathBuf,
    pub reports: Vec<NamedReport>,
    pub passed: bool,
}

fn summarize(name: &str, r: &GradCheckReport) -> NamedReport {
    NamedReport {
        name: name.into(),
        max_rel_err: r.max_rel_err,
        tol: r.tol,
        checked: r.checked.len(),
        passed: r.passed,
    }
}

pub fn gradcheck(cfg: &RunConfig, opts: &Options) -> Result<GradcheckOutcome> {
    let g = &cfg.gradcheck;
    let mut run = RunDir::create(&opts.root, "gradcheck", cfg)?;
    let prim = GradCheckConfig {
        step: g.step,
        tol: g.tol,
        ..Default::default()
    };
    let mut reports: Vec<NamedReport> = primitive_suite(&prim, cfg.seed)?
        .iter()
        .map(|(n, r)| summarize(n, r))
        .collect();
    let probe_model = Model::<f32>::new(&cfg.model, cfg.seed)?;
    let names: Vec<&str> = MODEL_CHECK_PARAMS
        .iter()
        .copied()
        .filter(|n| probe_model.store.find(n).is_some())
        .collect();
    let model_gc = GradCheckConfig {
        step: g.model_step,
        tol: g.tol,
        max_per_input: Some(g.samples),
        ..Default::default()
    };
    let r = check_model(&cfg.model, cfg.seed, g.batch, &names, &model_gc)?;
    reports.push(summarize("model", &r));
    let mut table = String::new();
    for r in &reports {
        run.emit("gradcheck", r)?;
        writeln!(
            table,
            "{:<32} {:>10.3e}  {}",
            r.name,
            r.max_rel_err,
            if r.passed { "ok" } else { "FAIL" }
        )
        .unwrap();
    }
    run.write(
        "gradcheck/report.json",
        &serde_json::to_string_pretty(&reports).expect("reports serialize"),
    )?;
    opts.log(table.trim_end());
    let passed = reports.iter().all(|r| r.passed);
    Ok(GradcheckOutcome {
        run_dir: run.path.clone(),
        reports,
        passed,
    })
}

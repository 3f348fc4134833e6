mod support;

use support::{metrics, run_dir, svformer, timeless, write_config, SMALL};
use svformer_cli::{load_config, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK};

#[test]
fn train_writes_the_run_layout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let root = dir.path().join("out");
    let out = svformer(&root, &["train", "-q", "-c", cfg.to_str().unwrap(), "--set", "train.epochs=3"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let run = run_dir(&root, "train-tiny-s0-");
    for f in ["config.resolved", "metrics.jsonl", "summary.csv", "checkpoints/last.ckpt", "checkpoints/best.ckpt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let records = metrics(&run);
    let epochs: Vec<_> = records.iter().filter(|r| r["event"] == "epoch").collect();
    assert_eq!(epochs.len(), 3);
    assert!(epochs.iter().all(|r| r["firing_rates"].is_array() && r["tau"].is_array()));
    assert_eq!(records.last().unwrap()["event"], "final");
    let csv = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);

    let resolved = load_config(Some(&run.join("config.resolved")), &[]).unwrap();
    assert_eq!(resolved.train.epochs, 3);
    assert_eq!(resolved.model.channels, vec![8, 16]);
}

#[test]
fn noise_free_sweep_equals_plain_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let root = dir.path().join("out");
    assert_eq!(svformer(&root, &["train", "-q", "-c", cfg]).code, EXIT_OK);
    let ckpt = run_dir(&root, "train-").join("checkpoints/last.ckpt");
    let ckpt = ckpt.to_str().unwrap();
    let eval = svformer(&root, &["eval", "-q", "-c", cfg, "--checkpoint", ckpt]);
    assert_eq!(eval.code, EXIT_OK, "{}", eval.stderr);
    let top1 = metrics(&run_dir(&root, "eval-"))[0]["top1"].as_f64().unwrap();

    let noise = svformer(
        &root,
        &["noise-eval", "-q", "-c", cfg, "--checkpoint", ckpt, "--set", "noise.gaussian_levels=[0.0, 1.0]", "--set", "noise.salt_pepper=[0.0, 0.3]"],
    );
    assert_eq!(noise.code, EXIT_OK, "{}", noise.stderr);
    let run = run_dir(&root, "noise-eval-");
    let rows = metrics(&run);
    assert_eq!(rows.len(), 4);
    for r in rows.iter().filter(|r| r["level"] == 0.0) {
        assert_eq!(r["top1"].as_f64().unwrap(), top1, "{r}");
    }
    let table = std::fs::read_to_string(run.join("noise/table.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with('a') && lines[2].starts_with('P'));
    assert_eq!(std::fs::read_to_string(run.join("noise/table.csv")).unwrap().lines().count(), 5);

    let prof = svformer(&root, &["profile", "-q", "-c", cfg, "--checkpoint", ckpt]);
    assert_eq!(prof.code, EXIT_OK, "{}", prof.stderr);
    let run = run_dir(&root, "profile-");
    for f in ["layers.csv", "report.json", "energy.json", "firing_rates.csv", "tau.csv"] {
        assert!(run.join("profile").join(f).is_file(), "{f}");
    }
    let energy: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("profile/energy.json")).unwrap()).unwrap();
    assert_eq!(energy["binarity_violations"], 0);
    assert!(energy["ratio"].as_f64().unwrap() < 1.0);
}

#[test]
fn aggregate_profile_reproduces_reference_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = svformer(
        dir.path(),
        &["profile", "-q", "--set", "profile.aggregate=true", "--set", "profile.flops_mac=0.7e9", "--set", "profile.sops=20.76e9", "--set", "profile.ann_flops=229.163e9"],
    );
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let s = &metrics(&run_dir(dir.path(), "profile-"))[0];
    assert!((s["energy_mj"].as_f64().unwrap() - 21.904).abs() < 1e-3);
    assert!((s["ann_energy_mj"].as_f64().unwrap() - 1054.148).abs() < 1e-2);
}

#[test]
fn gradcheck_passes_on_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = svformer(dir.path(), &["gradcheck", "-q"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let run = run_dir(dir.path(), "gradcheck-");
    let records = metrics(&run);
    assert!(records.iter().any(|r| r["name"] == "model"));
    assert!(records.iter().all(|r| r["passed"] == true && r["max_rel_err"].as_f64().unwrap() < 1e-4));
    assert!(run.join("gradcheck/report.json").is_file());
}

#[test]
fn failures_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");

    let out = svformer(&root, &["train", "--set", "train.epohcs=3"]);
    assert_eq!(out.code, EXIT_CONFIG);
    assert!(out.stderr.contains("train.epohcs") && out.stderr.contains("train.epochs"), "{}", out.stderr);

    let out = svformer(&root, &["train", "--set", "model.time_steps=\"eight\""]);
    assert_eq!(out.code, EXIT_CONFIG);
    assert!(out.stderr.contains("model.time_steps"), "{}", out.stderr);

    let bad = write_config(dir.path(), "bad.toml", "[model]\nchannels = [8, 16\n");
    assert_eq!(svformer(&root, &["eval", "-c", bad.to_str().unwrap()]).code, EXIT_CONFIG);
    assert_eq!(svformer(&root, &["eval"]).code, EXIT_CONFIG);
    assert_eq!(svformer(&root, &["frobnicate"]).code, EXIT_CONFIG);
    assert_eq!(svformer(&root, &["train", "--set", "data.shuffle_repeats=0"]).code, EXIT_CONFIG);
    assert_eq!(svformer(&root, &["--help"]).code, EXIT_OK);

    let out = svformer(&root, &["eval", "--checkpoint", dir.path().join("none.ckpt").to_str().unwrap()]);
    assert_eq!(out.code, EXIT_DATA);
    assert!(out.stderr.contains("none.ckpt"), "{}", out.stderr);
    let junk = write_config(dir.path(), "junk.ckpt", "not a checkpoint");
    assert_eq!(svformer(&root, &["eval", "--checkpoint", junk.to_str().unwrap()]).code, EXIT_DATA);
    let out = svformer(&root, &["train", "--set", &format!("data.train_path={:?}", junk.to_str().unwrap())]);
    assert_eq!(out.code, EXIT_DATA, "{}", out.stderr);

    let out = svformer(&root, &["gradcheck", "-q", "--set", "gradcheck.tol=1e-30"]);
    assert_eq!(out.code, EXIT_NUMERIC, "{}", out.stderr);
}

#[test]
fn reruns_reproduce_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for root in [&a, &b] {
        assert_eq!(svformer(root, &["train", "-q", "-c", cfg, "--set", "seed=3"]).code, EXIT_OK);
    }
    let (ra, rb) = (run_dir(&a, "train-"), run_dir(&b, "train-"));
    assert_eq!(ra.file_name(), rb.file_name());
    assert!(ra.file_name().unwrap().to_string_lossy().starts_with("train-tiny-s3-"));
    assert_eq!(timeless(&metrics(&ra)), timeless(&metrics(&rb)));
    assert_eq!(
        std::fs::read(ra.join("checkpoints/last.ckpt")).unwrap(),
        std::fs::read(rb.join("checkpoints/last.ckpt")).unwrap()
    );
}

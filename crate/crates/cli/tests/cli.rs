//! End-to-end smoke of the command-line interface: generate, split, render,
//! preview, baseline, run, compare.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_groupaffect"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("spawn groupaffect");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_dataset(dir: &Path, name: &str, per_class: usize) -> std::path::PathBuf {
    let manifest = dir.join(name);
    run_ok(bin().args([
        "dataset",
        "gen",
        "--per-class",
        &per_class.to_string(),
        "--size",
        "24x24",
        "--faces",
        "1..2",
        "--seed",
        "7",
        "--out",
        manifest.to_str().unwrap(),
    ]));
    manifest
}

#[test]
fn full_pipeline_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = gen_dataset(dir.path(), "synth.jsonl", 8);

    // Split writes both sides with the expected stratified counts.
    let train = dir.path().join("train.jsonl");
    let holdout = dir.path().join("holdout.jsonl");
    let out = run_ok(bin().args([
        "dataset",
        "split",
        "--holdout",
        "0.25",
        "--seed",
        "3",
        "--in",
        manifest.to_str().unwrap(),
        "--out-train",
        train.to_str().unwrap(),
        "--out-holdout",
        holdout.to_str().unwrap(),
    ]));
    assert!(out.contains("holdout: 6"), "split output: {out}");

    // Render heatmaps (with PNGs) for every record.
    let hm_dir = dir.path().join("hm");
    run_ok(bin().args([
        "heatmap",
        "render",
        "--manifest",
        manifest.to_str().unwrap(),
        "--kernel",
        "gaussian",
        "--out-dir",
        hm_dir.to_str().unwrap(),
        "--png",
    ]));
    let hmap_count = std::fs::read_dir(&hm_dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "hmap")
        })
        .count();
    assert_eq!(hmap_count, 24);
    assert!(hm_dir.join("p00000.png").exists());

    // Augment preview consumes a rendered tensor.
    let preview = dir.path().join("preview.png");
    run_ok(bin().args([
        "augment",
        "preview",
        "--in",
        hm_dir.join("p00000.hmap").to_str().unwrap(),
        "--seed",
        "5",
        "--out",
        preview.to_str().unwrap(),
    ]));
    assert!(preview.exists());

    // Baselines print accuracy and an aligned confusion matrix.
    let out = run_ok(bin().args([
        "baseline",
        "avg",
        "--manifest",
        manifest.to_str().unwrap(),
    ]));
    assert!(out.contains("averaging accuracy"), "avg output: {out}");
    assert!(out.contains("true\\pred"), "avg output: {out}");

    let out = run_ok(bin().args([
        "baseline",
        "rf",
        "--train",
        train.to_str().unwrap(),
        "--eval",
        holdout.to_str().unwrap(),
        "--trees",
        "15",
        "--seed",
        "1",
        "--machine",
    ]));
    assert!(out.contains("random forest (15 trees)"), "rf output: {out}");
    assert!(out.contains("true\tpredicted\tcount"), "rf output: {out}");

    // A tiny deterministic 3convnn run plus the comparison table.
    let run_dir = dir.path().join("runs");
    let config = dir.path().join("exp.cfg");
    std::fs::write(
        &config,
        format!(
            "name = smoke\nmanifest = {}\nout_dir = {}\nkernel = gaussian\nmodel.kind = 3convnn\nmodel.input_hw = 24\nmodel.width_mult = 0.25\nepochs = 2\nbatch_size = 8\nholdout_fraction = 0.2\n",
            manifest.display(),
            run_dir.display()
        ),
    )
    .unwrap();
    let out = run_ok(bin().args([
        "run",
        "--config",
        config.to_str().unwrap(),
        "--deterministic",
    ]));
    assert!(out.contains("best epoch"), "run output: {out}");
    assert!(run_dir.join("smoke.report").exists());
    assert!(run_dir.join("smoke.nnck").exists());
    let report_text = std::fs::read_to_string(run_dir.join("smoke.report")).unwrap();
    assert!(report_text.contains("wall_clock_secs redacted"));

    let out = run_ok(bin().args([
        "compare",
        "--reports",
        run_dir.to_str().unwrap(),
    ]));
    assert!(out.contains("Gaussian Heatmaps (3-ConvNN)"), "table: {out}");
    assert!(out.contains("52.79%"), "table: {out}");
}

#[test]
fn dataset_gen_rejects_malformed_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "dataset",
            "gen",
            "--per-class",
            "1",
            "--size",
            "64by64",
            "--faces",
            "1..2",
            "--seed",
            "0",
            "--out",
            dir.path().join("x.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dlsr::genotype_io;

fn dlsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsr"))
        .args(args)
        .env_remove("DLSR_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = dlsr(args);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{}.json", name))
        .display()
        .to_string()
}

const TINY: &str = r#"{
  "network": {"channels": 4, "num_cells": 2},
  "search": {"total_steps": 12, "warmup_steps": 4, "batch_size": 2, "snapshot_steps": [6, 9, 12]},
  "train": {"total_steps": 10, "batch_size": 2, "lr_halve_every": 4},
  "dataset": {"synthetic": {"count": 6, "height": 32, "width": 32}, "patch_size": 16, "seed": 1},
  "checkpoint_every": 5
}"#;

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.json");
    fs::write(&path, TINY).unwrap();
    path.display().to_string()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(dlsr(&[]).status.code(), Some(2));
    assert_eq!(dlsr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dlsr(&["analyze", "--bogus"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_are_one_json_line() {
    let out = dlsr(&["analyze", "--genotype", "/nonexistent/g.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{}", err);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert!(v["error"].as_str().unwrap().contains("/nonexistent/g.json"));
}

#[test]
fn analyze_prints_table_and_json() {
    let table = ok(&["analyze", "--genotype", &fixture("dlsr"), "--scale", "2"]);
    assert!(table.contains("87480"), "{}", table);
    assert!(table.lines().any(|l| l.starts_with("total")), "{}", table);
    let json: serde_json::Value =
        serde_json::from_str(&ok(&["analyze", "--genotype", &fixture("dlsr"), "--format", "json"])).unwrap();
    assert_eq!(json["cardinality"]["one_input"], 87480);
    let total = json["complexity"]["total_params"].as_u64().unwrap();
    assert!(table.contains(&total.to_string()));
    let per_layer = ok(&["analyze", "--supernet", "--channels", "8", "--cells", "3", "--per-layer"]);
    assert!(per_layer.contains("arch.alpha.8"));
    assert!(per_layer.contains("cells.2.stage3.dilconv5x5"));
}

#[test]
fn search_is_reproducible_and_exportable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("run1"), dir.path().join("run2"));
    ok(&["search", "--config", &cfg, "--out", &s(&a)]);
    ok(&["search", "--config", &cfg, "--out", &s(&b)]);
    for rel in ["genotype.json", "genotypes/step_000006.json", "genotypes/step_000009.json", "genotypes/step_000012.json", "search.jsonl"] {
        let (x, y) = (fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap());
        assert_eq!(x, y, "{}", rel);
    }
    for rel in ["genotypes/step_000006.json", "genotype.json"] {
        genotype_io::read(&a.join(rel)).unwrap();
    }
    let resolved = dlsr::config::RunConfig::read(&a.join("config.resolved.json")).unwrap();
    assert_eq!(resolved.search.total_steps, 12);
    let log = fs::read_to_string(a.join("search.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 12);
    assert!(lines[3]["l_val"].is_null() && lines[4]["l_val"].is_number());
    assert!(lines[0]["entropy"]["mean"].is_number());
    let exported = dir.path().join("exported.json");
    ok(&["export", "--checkpoint", &s(&a.join("search.ckpt")), "--out", &s(&exported)]);
    assert_eq!(fs::read(&exported).unwrap(), fs::read(a.join("genotype.json")).unwrap());

    let c = dir.path().join("run3");
    ok(&["search", "--config", &cfg, "--out", &s(&c), "--seed", "99"]);
    let r3 = dlsr::config::RunConfig::read(&c.join("config.resolved.json")).unwrap();
    assert_eq!(r3.search.seed, 99);
}

#[test]
fn search_resume_reproduces_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b) = (dir.path().join("full"), dir.path().join("resumed"));
    ok(&["search", "--config", &cfg, "--out", &s(&a)]);
    ok(&["search", "--config", &cfg, "--out", &s(&b), "--resume", &s(&a.join("checkpoints/step_000005.ckpt"))]);
    let full: Vec<String> = fs::read_to_string(a.join("search.jsonl")).unwrap().lines().map(String::from).collect();
    let tail: Vec<String> = fs::read_to_string(b.join("search.jsonl")).unwrap().lines().map(String::from).collect();
    assert_eq!(&full[5..], &tail[..]);
    assert_eq!(fs::read(a.join("genotype.json")).unwrap(), fs::read(b.join("genotype.json")).unwrap());
}

#[test]
fn train_eval_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let g = dir.path().join("g.json");
    genotype_io::write(
        &g,
        &dlsr_core::genotype::Genotype::repeated(
            [
                dlsr_core::search_space::Operation::Conv3x3,
                dlsr_core::search_space::Operation::SepConv3x3,
                dlsr_core::search_space::Operation::Conv1x1,
            ],
            4,
            2,
            2,
        ),
    )
    .unwrap();
    let a = dir.path().join("train");
    let out = ok(&["train", "--genotype", &s(&g), "--config", &cfg, "--out", &s(&a)]);
    assert!(out.contains("held_out_psnr"), "{}", out);
    let log: Vec<String> = fs::read_to_string(a.join("train.jsonl")).unwrap().lines().map(String::from).collect();
    assert_eq!(log.len(), 10);

    let b = dir.path().join("resumed");
    ok(&["train", "--genotype", &s(&g), "--config", &cfg, "--out", &s(&b), "--resume", &s(&a.join("checkpoints/step_000005.ckpt"))]);
    let tail: Vec<String> = fs::read_to_string(b.join("train.jsonl")).unwrap().lines().map(String::from).collect();
    assert_eq!(&log[5..], &tail[..]);

    let hr = dir.path().join("hr");
    fs::create_dir(&hr).unwrap();
    for (i, img) in dlsr_core::data::synthetic_dataset(2, 24, 28, 9).iter().enumerate() {
        dlsr::imageio::save_rgb(&hr.join(format!("{}.png", i)), img).unwrap();
    }
    fs::write(hr.join("broken.png"), b"not an image").unwrap();
    let report = dir.path().join("report.json");
    let csv = dir.path().join("scatter.csv");
    ok(&[
        "eval", "--checkpoint", &s(&a.join("train.ckpt")), "--genotype", &s(&g), "--hr-dir", &s(&hr),
        "--report", &s(&report), "--scatter", &s(&csv), "--name", "tiny", "--references",
    ]);
    let r: dlsr_core::metrics::EvalReport = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r.per_image.len(), 2);
    assert_eq!(r.skipped.len(), 1);
    let mean = r.per_image.iter().map(|m| m.psnr).sum::<f64>() / 2.0;
    assert!((r.mean_psnr - mean).abs() < 1e-12);
    assert!(r.complexity.is_some());
    let rows = dlsr::cli::read_scatter_file(&csv).unwrap();
    assert_eq!(rows[0].name, "tiny");
    assert_eq!(rows.len(), 1 + dlsr_core::metrics::reference_rows().len());

    let again = dir.path().join("again.json");
    ok(&["eval", "--checkpoint", &s(&a.join("train.ckpt")), "--hr-dir", &s(&hr), "--report", &s(&again)]);
    assert_eq!(fs::read(&report).unwrap(), fs::read(&again).unwrap());

    let bic: dlsr_core::metrics::EvalReport =
        serde_json::from_str(&ok(&["eval", "--hr-dir", &s(&hr), "--scale", "2"])).unwrap();
    assert!(bic.mean_psnr.is_finite());

    let other = dir.path().join("other.json");
    fs::write(&other, fs::read_to_string(fixture("model2")).unwrap()).unwrap();
    let bad = dlsr(&["eval", "--checkpoint", &s(&a.join("train.ckpt")), "--genotype", &s(&other), "--hr-dir", &s(&hr)]);
    assert_eq!(bad.status.code(), Some(1));

    let x4 = dir.path().join("x4");
    ok(&[
        "train", "--genotype", &s(&g), "--config", &cfg, "--out", &s(&x4), "--scale", "4", "--patch-size", "16",
        "--steps", "2", "--init-from", &s(&a.join("train.ckpt")),
    ]);
    let ck = dlsr::checkpoint::Checkpoint::load(&x4.join("train.ckpt")).unwrap();
    assert_eq!(ck.header.network.scale, 4);
}

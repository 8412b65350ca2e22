use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy.jsonl")
}

fn psi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = psi(args);
    assert!(
        out.status.success(),
        "psi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &[&str] = &[
    "--epochs", "3", "--n-sentences", "4", "--embed-dim", "8", "--hidden-dim", "8", "--dim", "8",
    "--max-len", "16", "--lr-backbone", "1e-3", "--lr-psi", "1e-3",
];

fn train(dir: &Path, extra: &[&str]) -> Output {
    let toy = toy();
    let mut args = vec!["train", "--dataset", toy.to_str().unwrap(), "--output-dir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    ok(&args)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_writes_artifacts_quickly() {
    let dir = TempDir::new().unwrap();
    let start = Instant::now();
    train(dir.path(), &[]);
    assert!(start.elapsed() < Duration::from_secs(60));
    for f in ["config.json", "train_log.jsonl", "checkpoint.json", "train_report.json", "metrics.json"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let log = fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let report = json(&dir.path().join("train_report.json"));
    assert_eq!(report["checkpoint"], "checkpoint.json");
}

#[test]
fn same_seed_gives_identical_report() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    train(a.path(), &["--seed", "11"]);
    train(b.path(), &["--seed", "11"]);
    let read = |d: &TempDir| fs::read(d.path().join("train_report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn eval_reproduces_final_metrics() {
    let dir = TempDir::new().unwrap();
    train(dir.path(), &[]);
    let ckpt = dir.path().join("checkpoint.json");
    let toy = toy();
    let args = ["eval", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", toy.to_str().unwrap()];
    let first = ok(&args).stdout;
    let second = ok(&args).stdout;
    assert_eq!(first, second);
    let eval: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(eval, json(&dir.path().join("metrics.json")));

    let mut stripped = args.to_vec();
    stripped.push("--strip-head");
    assert_eq!(ok(&stripped).stdout, first);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, r#"{"train": {"epochs": 7, "mu": 0.5, "seed": 3}}"#).unwrap();
    let out = dir.path().join("run");
    train(&out, &["--config", cfg.to_str().unwrap(), "--seed", "9"]);
    let echo = json(&out.join("config.json"));
    assert_eq!(echo["train"]["epochs"], 3);
    assert_eq!(echo["train"]["seed"], 9);
    assert_eq!(echo["train"]["mu"], 0.5);
}

#[test]
fn invalid_polarity_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("bad.jsonl");
    let mut text = fs::read_to_string(toy()).unwrap();
    text.push_str(r#"{"sentence_id":"x","text":"the food was fine","aspect":"food","polarity":"conflict","split":"train"}"#);
    text.push('\n');
    fs::write(&data, text).unwrap();
    let out = psi(&["train", "--dataset", data.to_str().unwrap(), "--output-dir", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(65));
}

#[test]
fn invalid_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let toy = toy();
    let out = psi(&["train", "--dataset", toy.to_str().unwrap(), "--mu=-1"]);
    assert_eq!(out.status.code(), Some(78));
    let cfg = dir.path().join("broken.json");
    fs::write(&cfg, "{not json").unwrap();
    let out = psi(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(78));
}

#[test]
fn ablate_writes_tables() {
    let dir = TempDir::new().unwrap();
    let toy = toy();
    let mut args = vec!["ablate", "--axis", "ranking_reg", "--dataset", toy.to_str().unwrap()];
    args.extend(["--output-dir", dir.path().to_str().unwrap(), "--epochs", "1"]);
    args.extend_from_slice(&SMALL[2..]);
    ok(&args);
    let tsv = fs::read_to_string(dir.path().join("ablation_ranking_reg.tsv")).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("Baseline\t"));
    assert!(dir.path().join("ablation_ranking_reg.md").exists());
    assert!(dir.path().join("ablation_ranking_reg.json").exists());
}

#[test]
fn export_embeddings_writes_one_row_per_instance() {
    let dir = TempDir::new().unwrap();
    train(dir.path(), &[]);
    let out = dir.path().join("emb.tsv");
    let ckpt = dir.path().join("checkpoint.json");
    let toy = toy();
    ok(&[
        "export-embeddings", "--checkpoint", ckpt.to_str().unwrap(), "--dataset", toy.to_str().unwrap(),
        "--out", out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 18);
    assert!(lines[0].starts_with("sentence_id\taspect\tpolarity\tsplit\tv0"));
    assert_eq!(lines[1].split('\t').count(), 4 + 8);
}

#[test]
fn dump_pairs_lists_one_pair_per_kind_and_instance() {
    let toy = toy();
    let mut args = vec!["dump-pairs", "--batches", "2", "--dataset", toy.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let out = ok(&args);
    let text = String::from_utf8(out.stdout).unwrap();
    let pairs: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(pairs.len(), 2 * 24);
    for p in &pairs {
        let same = p["a"]["polarity"] == p["b"]["polarity"];
        assert_eq!(same, p["kind"] == "intra", "{p}");
    }
}

#[test]
fn synth_is_seeded() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for p in [&a, &b] {
        ok(&["synth", "--seed", "5", "--train-size", "30", "--test-size", "9", "--out", p.to_str().unwrap()]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 39);
}

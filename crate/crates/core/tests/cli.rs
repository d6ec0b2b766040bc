use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const OA: &str = env!("CARGO_BIN_EXE_oa");
const LEXICON: &str = env!("CARGO_BIN_EXE_oa-lexicon-model");

fn bench(file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data/benchmark")
        .join(file)
        .to_str()
        .unwrap()
        .to_string()
}

fn oa(cwd: &Path, args: &[&str]) -> Output {
    Command::new(OA)
        .args(args)
        .current_dir(cwd)
        .env_remove("OA_CACHE_DIR")
        .output()
        .unwrap()
}

fn ok(cwd: &Path, args: &[&str]) -> Value {
    let out = oa(cwd, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(out.stdout.split(|&b| b == b'\n').next().unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn train(cwd: &Path) {
    ok(cwd, &["train", "--corpus", &bench("train.jsonl"), "--out", "run"]);
}

#[test]
fn globals_caps_ranking_and_drops_neutral_features() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let summary = ok(
        dir.path(),
        &["globals", "--corpus", &bench("test.jsonl"), "--out", "run", "--top-n", "2000", "--filter", "non-neutral"],
    );
    assert!(summary["features"].as_u64().unwrap() <= 2000);
    assert!(summary["tasks"].is_null());
    let csv = std::fs::read_to_string(dir.path().join("run/global_ranking.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "rank,feature,direction,magnitude,n_instances");
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], (i + 1).to_string());
        assert_ne!(cols[2], "neutral");
        assert!(cols[4].parse::<usize>().unwrap() >= 3);
    }
    let summary = ok(dir.path(), &["globals", "--corpus", &bench("test.jsonl"), "--out", "run", "--top-n", "5"]);
    assert_eq!(summary["features"], 5);
}

#[test]
fn detect_without_erroneous_features_warns_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"erroneous": [], "decisions": {}}"#).unwrap();
    let out = oa(
        dir.path(),
        &["detect", "--tau", "0", "--corpus", &bench("test.jsonl"), "--out", "run", "--erroneous", empty.to_str().unwrap()],
    );
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["flagged"], 0);
    assert_eq!(summary["scored"], 0);
    let csv = std::fs::read_to_string(dir.path().join("run/detection.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn usage_errors_exit_2_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["frobnicate"],
        vec!["train", "--out", "run"],
        vec!["train", "--out", "run", "--corpus", "missing.jsonl"],
        vec!["detect", "--out", "run", "--corpus", "missing.jsonl"],
        vec!["globals", "--out", "run", "--tau", "nan-ish"],
        vec!["explain", "--out", "run", "--corpus", "x", "--model", "carrier-pigeon"],
    ];
    for args in cases {
        let out = oa(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(stderr_json(&out)["error"]["kind"], "usage", "{args:?}");
    }
    std::fs::write(dir.path().join("bad.json"), "{ not json").unwrap();
    let out = oa(dir.path(), &["train", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = oa(
        dir.path(),
        &["explain", "--out", "run", "--corpus", &bench("test.jsonl"), "--model", "cmd:/nonexistent/model-server"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"]["kind"], "transport");
}

#[test]
fn external_model_ranks_like_builtin() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let corpus = dir.path().join("small.jsonl");
    let text: String = std::fs::read_to_string(bench("test.jsonl"))
        .unwrap()
        .lines()
        .take(60)
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&corpus, text).unwrap();
    let corpus = corpus.to_str().unwrap();
    ok(dir.path(), &["globals", "--corpus", corpus, "--out", "builtin", "--model-file", "run/model.json"]);
    let spec = format!("cmd:{LEXICON} --model run/model.json");
    ok(dir.path(), &["globals", "--corpus", corpus, "--out", "external", "--model", &spec]);
    let a = std::fs::read(dir.path().join("builtin/global_ranking.csv")).unwrap();
    let b = std::fs::read(dir.path().join("external/global_ranking.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cache_dir_env_override() {
    let dir = tempfile::tempdir().unwrap();
    train(dir.path());
    let cache = dir.path().join("elsewhere");
    let out = Command::new(OA)
        .args(["explain", "--corpus", &bench("test.jsonl"), "--out", "run", "--doc", "test-00000", "--n-samples", "64"])
        .current_dir(dir.path())
        .env("OA_CACHE_DIR", &cache)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(cache.join("predictions.jsonl").is_file());
    assert!(!dir.path().join("run/cache").exists());
    let line = std::fs::read_to_string(dir.path().join("run/explanations.jsonl")).unwrap();
    let e: Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(e["id"], "test-00000");
    let config: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/effective_config.explain.json")).unwrap()).unwrap();
    assert_eq!(config["explainer"]["n_samples"], 64);
    assert_eq!(PathBuf::from(config["cache_dir"].as_str().unwrap()), cache);
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let test = bench("test.jsonl");
    train(d);
    let g = ok(
        d,
        &["globals", "--corpus", &test, "--out", "run", "--top-n", "50", "--definitions", &bench("definitions.tsv"), "--gold-pool", &bench("gold_pool.jsonl")],
    );
    assert_eq!(g["tasks"], 60);
    ok(d, &["simulate-assessors", "--polarity", &bench("polarity.json"), "--out", "run"]);
    let imported = ok(d, &["import-judgments", "--judgments", "run/simulated_judgments.csv", "--out", "run"]);
    assert_eq!(imported["imported"], 300);
    let agg = ok(d, &["aggregate-judgments", "--out", "run"]);
    assert!(agg["erroneous"].as_u64().unwrap() >= 8);
    ok(d, &["detect", "--corpus", &test, "--out", "run"]);
    ok(d, &["evaluate", "--corpus", &test, "--out", "run", "--k", "10,100"]);
    for f in [
        "model.json",
        "train_report.json",
        "global_ranking.csv",
        "tasks.json",
        "judgments.jsonl",
        "erroneous_features.json",
        "detection.csv",
        "detection_summary.json",
        "detection_explanations.jsonl",
        "precision_at_k.csv",
        "sweep.csv",
        "confidence_histogram.csv",
        "evaluation_summary.json",
        "effective_config.evaluate.json",
    ] {
        assert!(d.join("run").join(f).is_file(), "missing {f}");
    }
    let sweep = std::fs::read_to_string(d.join("run/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().next().unwrap(), "tau,flagged_count,scored_count,precision");
    assert_eq!(sweep.lines().count(), 6);
    let pk = std::fs::read_to_string(d.join("run/precision_at_k.csv")).unwrap();
    assert_eq!(pk.lines().count(), 5);

    ok(d, &["sweep", "--corpus", &test, "--out", "run", "--taus", "0,0.2,0.4,5"]);
    let sweep = std::fs::read_to_string(d.join("run/sweep.csv")).unwrap();
    assert!(sweep.lines().last().unwrap().ends_with(",null"));
}

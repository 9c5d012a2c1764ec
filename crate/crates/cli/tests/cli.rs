// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn dapi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dapi"))
        .args(args)
        .env_remove("DAPI_SCORER_URL")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dapi(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small bundle, model and probe set shared by the tests.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn lm(&self) -> PathBuf {
        self.root.join("lm")
    }
    fn probes(&self) -> PathBuf {
        self.root.join("probes")
    }
    fn fresh(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let f = Fixture { _dir: dir, root };
        ok(&[
            "synth",
            "--out",
            s(&f.data()),
            "--seed",
            "3",
            "--samples",
            "600",
            "--non-toxic",
            "800",
            "--prompts-per-category",
            "3",
        ]);
        ok(&[
            "train-lm",
            "--data",
            s(&f.data()),
            "--out",
            s(&f.lm()),
            "--epochs",
            "2",
            "--seed",
            "3",
        ]);
        ok(&[
            "train-probes",
            "--data",
            s(&f.data()),
            "--model",
            s(&f.lm()),
            "--out",
            s(&f.probes()),
        ]);
        f
    })
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read_jsonl(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(dapi(&["synth", "--bogus"]).status.code(), Some(2));
    assert_eq!(dapi(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn missing_input_is_a_usage_error_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dapi(&[
        "train-lm",
        "--data",
        s(&dir.path().join("absent")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "usage");
}

#[test]
fn runtime_failure_exits_one_with_structured_error() {
    let f = fixture();
    let out = dapi(&[
        "generate",
        "--model",
        s(&f.lm()),
        "--prompt",
        "not_a_word",
        "--out",
        s(&f.fresh("bad-gen")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["kind"].is_string());
    assert!(err["error"].as_str().unwrap().contains("not_a_word"));
}

#[test]
fn eval_without_scorer_is_a_usage_error() {
    let f = fixture();
    let out = dapi(&[
        "eval",
        "--model",
        s(&f.lm()),
        "--data",
        s(&f.data()),
        "--out",
        s(&f.fresh("noscorer")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_probes_manifest_records_defaults() {
    let m = manifest(&fixture().probes());
    assert_eq!(m["command"], "train-probes");
    let c = &m["config"]["train-probes"];
    assert_eq!(c["lambda"], 0.01);
    assert_eq!(c["epochs"], 20);
    assert_eq!(c["batch_size"], 128);
    assert_eq!(c["lr"], 5e-4);
    assert_eq!(c["weight_decay"], 0.01);
    assert_eq!(c["warmup_ratio"], 0.1);
    assert_eq!(m["seeds"]["probes"], 0);
    assert!(m["duration_secs"].as_f64().unwrap() >= 0.0);
    assert!(m["version"].is_string());
    let outputs: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(
        outputs,
        ["probes.json", "single_probe.json", "training.json"]
    );
}

#[test]
fn fixed_zero_alpha_generation_equals_unsteered() {
    let f = fixture();
    let (a, b) = (f.fresh("gen-a0"), f.fresh("gen-plain"));
    let probes = f.probes().join("probes.json");
    ok(&[
        "generate",
        "--model",
        s(&f.lm()),
        "--probes",
        s(&probes),
        "--data",
        s(&f.data()),
        "--scaling",
        "fixed",
        "--alpha",
        "0",
        "--use-neg-cos",
        "--out",
        s(&a),
    ]);
    ok(&[
        "generate",
        "--model",
        s(&f.lm()),
        "--data",
        s(&f.data()),
        "--out",
        s(&b),
    ]);
    let (ra, rb) = (
        read_jsonl(&a.join("generations.jsonl")),
        read_jsonl(&b.join("generations.jsonl")),
    );
    assert_eq!(ra.len(), rb.len());
    assert!(!ra.is_empty());
    for (x, y) in ra.iter().zip(&rb) {
        assert_eq!(x["output_ids"], y["output_ids"]);
        assert_eq!(x["forward_pass_count"], 20);
    }
}

#[test]
fn stub_scorer_eval_reports_per_category_table() {
    let f = fixture();
    let out = f.fresh("eval");
    let probes = f.probes().join("probes.json");
    let single = f.probes().join("single_probe.json");
    ok(&[
        "eval",
        "--model",
        s(&f.lm()),
        "--probes",
        s(&probes),
        "--single",
        s(&single),
        "--data",
        s(&f.data()),
        "--stub-scorer",
        "--workers",
        "3",
        "--ppl-tokens",
        "128",
        "--out",
        s(&out),
    ]);
    let reports: Vec<Value> =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let labels: Vec<&str> = reports
        .iter()
        .map(|r| r["label"].as_str().unwrap())
        .collect();
    assert_eq!(labels, ["unsteered", "single", "multiple"]);
    for r in &reports {
        assert_eq!(r["sample_count"], 12);
        let cats = r["per_category"].as_object().unwrap();
        assert_eq!(cats.len(), 4);
        for stats in cats.values() {
            assert_eq!(stats["count"], 3);
            assert!(stats["emission_rate"].is_number());
        }
        assert!(r["perplexity"].as_f64().unwrap() >= 1.0);
    }
    let table = std::fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(table.contains("threat") && table.contains("multiple"));
}

#[test]
fn worker_count_does_not_change_eval_output() {
    let f = fixture();
    let probes = f.probes().join("probes.json");
    let mut files = Vec::new();
    for w in ["1", "4"] {
        let out = f.fresh(&format!("eval-w{w}"));
        ok(&[
            "eval",
            "--model",
            s(&f.lm()),
            "--probes",
            s(&probes),
            "--data",
            s(&f.data()),
            "--stub-scorer",
            "--ppl-tokens",
            "0",
            "--workers",
            w,
            "--out",
            s(&out),
        ]);
        let mut v: Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap())
                .unwrap();
        for r in v.as_array_mut().unwrap() {
            r["config"]["workers"] = Value::Null;
        }
        files.push(v);
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn analyze_writes_similarity_and_lexicon_overlap() {
    let f = fixture();
    let out = f.fresh("analyze");
    let probes = f.probes().join("probes.json");
    ok(&[
        "analyze",
        "--model",
        s(&f.lm()),
        "--probes",
        s(&probes),
        "--data",
        s(&f.data()),
        "--out",
        s(&out),
    ]);
    let a: Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("analysis.json")).unwrap()).unwrap();
    assert_eq!(a["categories"].as_array().unwrap().len(), 5);
    assert_eq!(a["top_tokens"]["threat"].as_array().unwrap().len(), 10);
    assert!(a["lexicon_overlap"]["insult"]["own"].is_number());
}

#[test]
fn every_recorded_command_replays_identically() {
    let f = fixture();
    let probes = f.probes().join("probes.json");
    let gen = f.fresh("gen-replay-src");
    ok(&[
        "generate",
        "--model",
        s(&f.lm()),
        "--probes",
        s(&probes),
        "--data",
        s(&f.data()),
        "--out",
        s(&gen),
    ]);
    for dir in [f.data(), f.lm(), f.probes(), gen] {
        let out = ok(&["replay", s(&dir.join("manifest.json"))]);
        let line = String::from_utf8_lossy(&out.stdout);
        let verdict: Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
        assert_eq!(verdict["identical"], true, "{}", dir.display());
    }
}

#[test]
fn replay_detects_tampered_outputs() {
    let f = fixture();
    let src = f.fresh("gen-tamper");
    ok(&[
        "generate",
        "--model",
        s(&f.lm()),
        "--prompt",
        "w_1 w_2",
        "--out",
        s(&src),
    ]);
    std::fs::write(src.join("generations.jsonl"), "tampered\n").unwrap();
    let out = dapi(&["replay", s(&src.join("manifest.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["kind"], "replay_mismatch");
}

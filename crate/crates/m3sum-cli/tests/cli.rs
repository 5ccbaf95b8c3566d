//! End-to-end tests driving the compiled binary: artifact layout, seeds,
//! determinism, resume, and validation failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_m3sum"));
    // Isolate tests from an ambient seed.
    c.env_remove("M3S_SEED");
    c
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "command failed\n--- stdout ---\n{}\n--- stderr ---\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails(out: Output) -> String {
    assert!(
        !out.status.success(),
        "command unexpectedly succeeded\n--- stdout ---\n{}",
        String::from_utf8_lossy(&out.stdout),
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small two-language corpus: 3 train + 2 test articles per direction.
fn synth(dir: &Path, seed: u64) {
    ok(bin()
        .args(["synth-data", "--langs", "2", "--per-pair", "3", "--test-count", "2"])
        .args(["--doc-len", "4:6", "--sum-len", "2:2"])
        .args(["--images", "1", "--regions", "2", "--d-v", "8"])
        .arg("--seed")
        .arg(seed.to_string())
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap());
}

fn build_vocab(dir: &Path) {
    ok(bin()
        .arg("build-vocab")
        .arg("--corpus")
        .arg(dir.join("train.jsonl"))
        .arg("--corpus")
        .arg(dir.join("test.jsonl"))
        .arg("--out")
        .arg(dir)
        .output()
        .unwrap());
}

fn prepared_data(seed: u64) -> TempDir {
    let tmp = TempDir::new().unwrap();
    synth(tmp.path(), seed);
    build_vocab(tmp.path());
    tmp
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["train", "--batch-size", "2", "--t1", "4", "--warmup", "2", "--seed", "5"])
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_data_is_deterministic_for_identical_flags() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    synth(a.path(), 7);
    synth(b.path(), 7);
    for name in ["train.jsonl", "test.jsonl", "vision.m3sv"] {
        let left = fs::read(a.path().join(name)).unwrap();
        let right = fs::read(b.path().join(name)).unwrap();
        assert_eq!(left, right, "{name} differs between identical invocations");
    }
    // Manifests differ only in the output paths, never in settings.
    let read = |d: &Path| -> Value {
        serde_json::from_str(&fs::read_to_string(d.join("manifest-synth-data.json")).unwrap())
            .unwrap()
    };
    assert_eq!(read(a.path())["resolved"], read(b.path())["resolved"]);
}

#[test]
fn single_language_corpus_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let err = fails(
        bin()
            .args(["synth-data", "--langs", "1", "--out"])
            .arg(tmp.path())
            .output()
            .unwrap(),
    );
    assert!(err.contains("at least 2 languages"), "stderr: {err}");
}

#[test]
fn seed_env_var_is_a_fallback_not_an_override() {
    let flag = TempDir::new().unwrap();
    synth(flag.path(), 9);

    // Same seed via the environment only.
    let env = TempDir::new().unwrap();
    ok(bin()
        .args(["synth-data", "--langs", "2", "--per-pair", "3", "--test-count", "2"])
        .args(["--doc-len", "4:6", "--sum-len", "2:2"])
        .args(["--images", "1", "--regions", "2", "--d-v", "8"])
        .arg("--out")
        .arg(env.path())
        .env("M3S_SEED", "9")
        .output()
        .unwrap());
    assert_eq!(
        fs::read(flag.path().join("train.jsonl")).unwrap(),
        fs::read(env.path().join("train.jsonl")).unwrap(),
        "M3S_SEED=9 should match --seed 9"
    );

    // An explicit flag wins over a conflicting environment value.
    let both = TempDir::new().unwrap();
    ok(bin()
        .args(["synth-data", "--langs", "2", "--per-pair", "3", "--test-count", "2"])
        .args(["--doc-len", "4:6", "--sum-len", "2:2"])
        .args(["--images", "1", "--regions", "2", "--d-v", "8"])
        .args(["--seed", "9", "--out"])
        .arg(both.path())
        .env("M3S_SEED", "1234")
        .output()
        .unwrap());
    assert_eq!(
        fs::read(flag.path().join("train.jsonl")).unwrap(),
        fs::read(both.path().join("train.jsonl")).unwrap(),
        "--seed 9 should ignore M3S_SEED"
    );

    let bad = TempDir::new().unwrap();
    let err = fails(
        bin()
            .args(["synth-data", "--langs", "2", "--out"])
            .arg(bad.path())
            .env("M3S_SEED", "zebra")
            .output()
            .unwrap(),
    );
    assert!(err.contains("M3S_SEED"), "stderr: {err}");
}

#[test]
fn pipeline_produces_all_artifacts_and_manifests() {
    let data = prepared_data(7);
    for name in ["manifest-synth-data.json", "manifest-build-vocab.json"] {
        let m: Value = serde_json::from_str(&fs::read_to_string(data.path().join(name)).unwrap())
            .unwrap();
        assert!(m.get("resolved").is_some(), "{name} lacks resolved settings");
    }

    let run = TempDir::new().unwrap();
    let stdout = ok(train(
        data.path(),
        &run.path().join("run"),
        &["--max-steps", "6", "--eval-interval", "3"],
    ));
    assert!(stdout.contains("step 6/6"), "stdout: {stdout}");
    let run_dir = run.path().join("run");
    for name in ["model.m3ck", "metrics.jsonl", "manifest-train.json"] {
        assert!(run_dir.join(name).is_file(), "missing {name}");
    }
    assert!(run_dir.join("checkpoints/step-000003.m3ck").is_file());
    assert!(run_dir.join("checkpoints/step-000006.m3ck").is_file());

    let gen_dir = run.path().join("gen");
    ok(bin()
        .arg("generate")
        .arg("--checkpoint")
        .arg(run_dir.join("model.m3ck"))
        .arg("--data")
        .arg(data.path())
        .args(["--directions", "en-id", "--beam", "2"])
        .arg("--out")
        .arg(&gen_dir)
        .output()
        .unwrap());
    let lines = jsonl(&gen_dir.join("generated-en-id.jsonl"));
    assert_eq!(lines.len(), 2, "two test articles in language id");
    for line in &lines {
        assert!(line["token_ids"].is_array());
        assert!(line["text"].is_string());
        assert_eq!(line["src"], "en");
        assert_eq!(line["tgt"], "id");
    }
    assert!(gen_dir.join("manifest-generate.json").is_file());

    let eval_dir = run.path().join("eval");
    let stdout = ok(bin()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(run_dir.join("model.m3ck"))
        .arg("--data")
        .arg(data.path())
        .args(["--beam", "1"])
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap());
    assert!(stdout.contains("src\\tgt"), "stdout: {stdout}");
    assert_eq!(jsonl(&eval_dir.join("grid.jsonl")).len(), 4, "full 2x2 grid");
    assert!(eval_dir.join("grid.txt").is_file());
    assert!(eval_dir.join("manifest-evaluate.json").is_file());

    let stdout = ok(bin()
        .arg("inspect-checkpoint")
        .arg(run_dir.join("model.m3ck"))
        .output()
        .unwrap());
    assert!(stdout.contains("optimizer state: present"), "stdout: {stdout}");
    assert!(stdout.contains("embed.tok"), "stdout: {stdout}");
}

#[test]
fn resume_reproduces_the_uninterrupted_run_bitwise() {
    let data = prepared_data(7);
    let runs = TempDir::new().unwrap();
    let full = runs.path().join("full");
    let half = runs.path().join("half");
    let resumed = runs.path().join("resumed");

    ok(train(data.path(), &full, &["--max-steps", "8", "--eval-interval", "4"]));
    ok(train(data.path(), &half, &["--max-steps", "4", "--eval-interval", "4"]));
    ok(bin()
        .args(["train", "--max-steps", "8", "--eval-interval", "4"])
        .arg("--data")
        .arg(data.path())
        .arg("--resume")
        .arg(half.join("model.m3ck"))
        .arg("--out")
        .arg(&resumed)
        .output()
        .unwrap());

    assert_eq!(
        fs::read(full.join("model.m3ck")).unwrap(),
        fs::read(resumed.join("model.m3ck")).unwrap(),
        "final checkpoint differs after resume"
    );
    let full_metrics = fs::read_to_string(full.join("metrics.jsonl")).unwrap();
    let resumed_metrics = fs::read_to_string(resumed.join("metrics.jsonl")).unwrap();
    assert_eq!(
        full_metrics.lines().last().unwrap(),
        resumed_metrics.lines().last().unwrap(),
        "final metrics line differs after resume"
    );
}

#[test]
fn metrics_log_alpha_matches_the_annealing_rule() {
    let data = prepared_data(7);
    let run = TempDir::new().unwrap();
    let out = run.path().join("run");
    ok(train(data.path(), &out, &["--max-steps", "6", "--eval-interval", "1"]));
    let lines = jsonl(&out.join("metrics.jsonl"));
    assert_eq!(lines.len(), 6);
    for line in &lines {
        let t = line["step"].as_u64().unwrap() as usize;
        let alpha = line["alpha"].as_f64().unwrap();
        let expect = m3sum::objectives::alpha_schedule(t, 4).unwrap();
        assert_eq!(alpha, expect, "alpha at step {t}");
    }
}

#[test]
fn direction_selection_limits_the_grid() {
    let data = prepared_data(7);
    let run = TempDir::new().unwrap();
    let out = run.path().join("run");
    ok(train(data.path(), &out, &["--max-steps", "4", "--eval-interval", "4"]));
    let eval_dir = run.path().join("eval");
    ok(bin()
        .arg("evaluate")
        .arg("--checkpoint")
        .arg(out.join("model.m3ck"))
        .arg("--data")
        .arg(data.path())
        .args(["--beam", "1", "--directions", "en-en,id-en"])
        .arg("--out")
        .arg(&eval_dir)
        .output()
        .unwrap());
    let cells = jsonl(&eval_dir.join("grid.jsonl"));
    assert_eq!(cells.len(), 2);
    assert_eq!((cells[0]["src"].as_str(), cells[0]["tgt"].as_str()), (Some("en"), Some("en")));
    assert_eq!((cells[1]["src"].as_str(), cells[1]["tgt"].as_str()), (Some("id"), Some("en")));

    let bad = run.path().join("bad");
    let err = fails(
        bin()
            .arg("evaluate")
            .arg("--checkpoint")
            .arg(out.join("model.m3ck"))
            .arg("--data")
            .arg(data.path())
            .args(["--directions", "en-xx"])
            .arg("--out")
            .arg(&bad)
            .output()
            .unwrap(),
    );
    assert!(err.contains("xx"), "stderr: {err}");
}

#[test]
fn missing_alignment_fails_before_step_zero() {
    let data = prepared_data(7);
    let train_path = data.path().join("train.jsonl");
    let mut lines: Vec<Value> = jsonl(&train_path);
    let aligned = lines[0]["aligned"].as_object_mut().unwrap();
    let victim = aligned.keys().next().unwrap().clone();
    aligned.remove(&victim);
    let text: String =
        lines.iter().map(|l| serde_json::to_string(l).unwrap() + "\n").collect();
    fs::write(&train_path, text).unwrap();

    let run = TempDir::new().unwrap();
    let out = run.path().join("run");
    let err = fails(train(data.path(), &out, &["--max-steps", "4"]));
    assert!(err.contains("no aligned document"), "stderr: {err}");
    assert!(!out.join("model.m3ck").exists(), "failed run must not leave a model");
}

#[test]
fn config_file_sets_values_and_flags_override() {
    let data = prepared_data(7);
    let run = TempDir::new().unwrap();
    let cfg_path = run.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"train": {"seed": 3, "max_steps": 4, "batch_size": 2, "t1": 4, "warmup": 2, "eval_interval": 4}}"#,
    )
    .unwrap();

    let out = run.path().join("run");
    ok(bin()
        .args(["train", "--max-steps", "6"])
        .arg("--config")
        .arg(&cfg_path)
        .arg("--data")
        .arg(data.path())
        .arg("--out")
        .arg(&out)
        // A file-pinned seed beats the environment.
        .env("M3S_SEED", "77")
        .output()
        .unwrap());
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest-train.json")).unwrap())
            .unwrap();
    let train_cfg = &manifest["resolved"]["train"];
    assert_eq!(train_cfg["seed"], 3, "seed from config file");
    assert_eq!(train_cfg["max_steps"], 6, "flag overrides config file");
    assert_eq!(train_cfg["batch_size"], 2);

    // Resuming carries configuration in the header; --config is rejected.
    let err = fails(
        bin()
            .arg("train")
            .arg("--config")
            .arg(&cfg_path)
            .arg("--resume")
            .arg(out.join("model.m3ck"))
            .arg("--data")
            .arg(data.path())
            .arg("--out")
            .arg(run.path().join("second"))
            .output()
            .unwrap(),
    );
    assert!(err.contains("drop --config"), "stderr: {err}");
}

#[test]
fn checkpoint_directory_layout_uses_fixed_names() {
    let data = prepared_data(7);
    let expect: Vec<PathBuf> = ["train.jsonl", "test.jsonl", "vision.m3sv", "vocab.txt"]
        .iter()
        .map(|n| data.path().join(n))
        .collect();
    for p in &expect {
        assert!(p.is_file(), "missing {}", p.display());
    }
}

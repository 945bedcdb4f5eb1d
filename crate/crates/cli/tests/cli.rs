//! End-to-end tests of the command-line binary: file contracts,
//! determinism, warnings, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gated-cnn-nci"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny but learnable dataset + encoded artifacts + embeddings.
fn prepare(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let raw = root.join("raw");
    let enc = root.join("enc");
    let emb = root.join("emb.txt");
    assert_ok(&run(&[
        "synth",
        "--out",
        path_str(&raw),
        "--train-notes",
        "150",
        "--dev-notes",
        "40",
        "--test-notes",
        "40",
        "--seed",
        "3",
    ]));
    assert_ok(&run(&[
        "preprocess",
        "--train",
        path_str(&raw.join("train.jsonl")),
        "--dev",
        path_str(&raw.join("dev.jsonl")),
        "--test",
        path_str(&raw.join("test.jsonl")),
        "--codes",
        path_str(&raw.join("codes.tsv")),
        "--out",
        path_str(&enc),
    ]));
    assert_ok(&run(&[
        "train-embeddings",
        "--data",
        path_str(&enc),
        "--out",
        path_str(&emb),
        "--dim",
        "12",
        "--epochs",
        "2",
        "--seed",
        "4",
    ]));
    (raw, enc, emb)
}

fn write_fast_config(root: &Path) -> PathBuf {
    let path = root.join("cfg.json");
    fs::write(
        &path,
        r#"{"gate_dim": 6, "kernel_size": 2, "levels": 2, "lr": 0.003, "dropout": 0.1, "max_epochs": 2, "patience": 2}"#,
    )
    .unwrap();
    path
}

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn synth_and_preprocess_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args_for = |dir: &Path| {
        vec![
            "synth".to_string(),
            "--out".to_string(),
            dir.to_string_lossy().into_owned(),
            "--train-notes".to_string(),
            "60".to_string(),
            "--dev-notes".to_string(),
            "20".to_string(),
            "--test-notes".to_string(),
            "20".to_string(),
            "--seed".to_string(),
            "11".to_string(),
        ]
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let args: Vec<String> = args_for(dir);
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_ok(&run(&refs));
    }
    assert_eq!(dir_snapshot(&a), dir_snapshot(&b));

    // Re-running preprocess over the same inputs is byte-identical.
    for out in ["enc_a", "enc_b"] {
        assert_ok(&run(&[
            "preprocess",
            "--train",
            path_str(&a.join("train.jsonl")),
            "--dev",
            path_str(&a.join("dev.jsonl")),
            "--codes",
            path_str(&a.join("codes.tsv")),
            "--out",
            path_str(&tmp.path().join(out)),
        ]));
    }
    assert_eq!(
        dir_snapshot(&tmp.path().join("enc_a")),
        dir_snapshot(&tmp.path().join("enc_b"))
    );
}

#[test]
fn preprocess_truncates_long_notes() {
    let tmp = tempfile::tempdir().unwrap();
    let long_text = vec!["alpha"; 3000].join(" ");
    let notes = format!(
        "{}\n{}\n{}\n",
        serde_json::json!({"id": "n1", "text": long_text, "codes": ["1.0"]}),
        serde_json::json!({"id": "n2", "text": "alpha beta", "codes": []}),
        serde_json::json!({"id": "n3", "text": "alpha beta gamma", "codes": ["1.0"]}),
    );
    let notes_path = tmp.path().join("train.jsonl");
    fs::write(&notes_path, notes).unwrap();
    let codes_path = tmp.path().join("codes.tsv");
    fs::write(&codes_path, "1.0\talpha disease\n").unwrap();
    let enc = tmp.path().join("enc");
    assert_ok(&run(&[
        "preprocess",
        "--train",
        path_str(&notes_path),
        "--codes",
        path_str(&codes_path),
        "--out",
        path_str(&enc),
        "--min-doc-count",
        "1",
    ]));
    let encoded = fs::read_to_string(enc.join("train.encoded.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(encoded.lines().next().unwrap()).unwrap();
    assert_eq!(first["token_ids"].as_array().unwrap().len(), 2500);
}

#[test]
fn preprocess_warns_on_missing_description_and_keeps_the_code() {
    let tmp = tempfile::tempdir().unwrap();
    let notes = format!(
        "{}\n{}\n{}\n",
        serde_json::json!({"id": "a", "text": "fever chills", "codes": ["9.9"]}),
        serde_json::json!({"id": "b", "text": "fever cough", "codes": ["9.9"]}),
        serde_json::json!({"id": "c", "text": "fever", "codes": []}),
    );
    let notes_path = tmp.path().join("train.jsonl");
    fs::write(&notes_path, notes).unwrap();
    let codes_path = tmp.path().join("codes.tsv");
    fs::write(&codes_path, "1.0\tdocumented code\n").unwrap();
    let enc = tmp.path().join("enc");
    let out = run(&[
        "preprocess",
        "--train",
        path_str(&notes_path),
        "--codes",
        path_str(&codes_path),
        "--out",
        path_str(&enc),
        "--min-doc-count",
        "1",
    ]);
    assert_ok(&out);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("9.9"), "stderr: {stderr}");
    let written = fs::read_to_string(enc.join("codes.tsv")).unwrap();
    assert!(written.contains("9.9\t\n"), "codes.tsv: {written}");
}

#[test]
fn malformed_json_line_is_a_data_error_naming_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let notes_path = tmp.path().join("train.jsonl");
    fs::write(
        &notes_path,
        "{\"id\":\"a\",\"text\":\"x y\",\"codes\":[]}\nnot json at all\n",
    )
    .unwrap();
    let codes_path = tmp.path().join("codes.tsv");
    fs::write(&codes_path, "1.0\tsomething\n").unwrap();
    let out = run(&[
        "preprocess",
        "--train",
        path_str(&notes_path),
        "--codes",
        path_str(&codes_path),
        "--out",
        path_str(&tmp.path().join("enc")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(":2:"), "stderr: {stderr}");
}

#[test]
fn train_eval_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (raw, enc, emb) = prepare(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let run_dir = tmp.path().join("run");
    assert_ok(&run(&[
        "train",
        "--data",
        path_str(&enc),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&run_dir),
        "--config",
        path_str(&cfg),
        "--seed",
        "5",
    ]));
    assert!(run_dir.join("model.ckpt").exists());
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
    for line in log.lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(entry["train_loss"].is_number());
        assert!(entry["micro_f1"].is_number());
    }

    let report_path = tmp.path().join("report.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        path_str(&run_dir.join("model.ckpt")),
        "--data",
        path_str(&enc),
        "--split",
        "test",
        "--k",
        "5",
        "--out",
        path_str(&report_path),
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    for field in [
        "macro_auc",
        "micro_auc",
        "macro_f1",
        "micro_f1",
        "p_at_k",
        "k",
        "n_docs",
        "n_labels",
    ] {
        assert!(
            !report[field].is_null() || field.contains("auc"),
            "missing {field}"
        );
    }
    assert_eq!(report["n_labels"], 20);

    let pred_path = tmp.path().join("preds.jsonl");
    let out = run(&[
        "predict",
        "--checkpoint",
        path_str(&run_dir.join("model.ckpt")),
        "--data",
        path_str(&enc),
        "--notes",
        path_str(&raw.join("test.jsonl")),
        "--k",
        "3",
        "--out",
        path_str(&pred_path),
    ]);
    assert_ok(&out);
    let preds = fs::read_to_string(&pred_path).unwrap();
    assert_eq!(preds.lines().count(), 40);
    for line in preds.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        let scores: Vec<f64> = record["predictions"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| p["score"].as_f64().unwrap())
            .collect();
        assert_eq!(scores.len(), 3);
        assert!(
            scores.windows(2).all(|w| w[0] >= w[1]),
            "not sorted: {scores:?}"
        );
    }
}

#[test]
fn eval_refuses_mismatched_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let (_raw, enc, emb) = prepare(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let run_dir = tmp.path().join("run");
    assert_ok(&run(&[
        "train",
        "--data",
        path_str(&enc),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&run_dir),
        "--config",
        path_str(&cfg),
    ]));

    // A different corpus gives a different vocabulary hash.
    let other_raw = tmp.path().join("other_raw");
    let other_enc = tmp.path().join("other_enc");
    assert_ok(&run(&[
        "synth",
        "--out",
        path_str(&other_raw),
        "--vocab-size",
        "300",
        "--train-notes",
        "80",
        "--dev-notes",
        "20",
        "--test-notes",
        "20",
        "--seed",
        "99",
    ]));
    assert_ok(&run(&[
        "preprocess",
        "--train",
        path_str(&other_raw.join("train.jsonl")),
        "--test",
        path_str(&other_raw.join("test.jsonl")),
        "--codes",
        path_str(&other_raw.join("codes.tsv")),
        "--out",
        path_str(&other_enc),
    ]));
    let out = run(&[
        "eval",
        "--checkpoint",
        path_str(&run_dir.join("model.ckpt")),
        "--data",
        path_str(&other_enc),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("hash mismatch"), "stderr: {stderr}");
}

#[test]
fn gradcheck_reports_and_exits_zero() {
    let out = run(&["gradcheck", "--tokens", "12", "--codes", "4"]);
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "stdout: {stdout}");
    for name in ["embedding", "conv_kernel", "out_scale"] {
        assert!(stdout.contains(name), "missing {name} in {stdout}");
    }
}

#[test]
fn ablate_emits_three_variant_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let (_raw, enc, emb) = prepare(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let out_dir = tmp.path().join("ablation");
    let out = run(&[
        "ablate",
        "--data",
        path_str(&enc),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&out_dir),
        "--config",
        path_str(&cfg),
        "--seed",
        "6",
    ]);
    assert_ok(&out);
    let csv = fs::read_to_string(out_dir.join("ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(
        lines[0],
        "variant,macro_auc,micro_auc,macro_f1,micro_f1,p_at_k"
    );
    assert!(lines[1].starts_with("full,"));
    assert!(lines[2].starts_with("no_nci,"));
    assert!(lines[3].starts_with("no_gating,"));
}

#[test]
fn search_emits_trials_and_best_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (_raw, enc, emb) = prepare(tmp.path());
    let cfg = write_fast_config(tmp.path());
    let out_dir = tmp.path().join("search");
    let out = run(&[
        "search",
        "--data",
        path_str(&enc),
        "--embeddings",
        path_str(&emb),
        "--out",
        path_str(&out_dir),
        "--config",
        path_str(&cfg),
        "--budget",
        "2",
        "--epochs-per-trial",
        "1",
        "--seed",
        "8",
    ]);
    assert_ok(&out);
    let csv = fs::read_to_string(out_dir.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let best: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("best_config.json")).unwrap())
            .unwrap();
    let lr = best["lr"].as_f64().unwrap();
    assert!((1e-6..=1e-2).contains(&lr));
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["synth"]); // missing required --out
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn amdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amdn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = amdn(args);
    assert!(
        out.status.success(),
        "amdn {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "[scenario]\nnum_sequences = 40\n\n[train]\nbatch_size = 8\nmax_epochs = 3\n\n\
         [train.model.encoder]\nevent_dim = 8\nposition_dim = 4\ntime_dim = 4\nnum_frequencies = 2\n\n\
         [train.model.head]\ncomponents = 2\ntype_hidden = 8\n\n[detection.cluster]\nrestarts = 5\n",
    )
    .unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_slice(&read(p)).unwrap()
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for dir in [&a, &b] {
        ok(&["simulate", "--config", s(&config), "--seed", "7", "--out", s(dir)]);
    }
    ok(&["simulate", "--config", s(&config), "--seed", "8", "--out", s(&c)]);
    for f in ["events.jsonl", "labels.json", "manifest.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    assert_ne!(read(&a.join("events.jsonl")), read(&c.join("events.jsonl")));
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["scenario"]["num_sequences"], 40);
    let labels = json(&a.join("labels.json"));
    assert_eq!(labels["labels"].as_object().unwrap().values().filter(|v| v == &true).count(), 6);
}

#[test]
fn train_then_eval_reports_the_metric_schema_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = small_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["simulate", "--config", s(&config), "--seed", "3", "--out", s(&data)]);
    let events = data.join("events.jsonl");
    let (t1, t2) = (tmp.path().join("t1"), tmp.path().join("t2"));
    for t in [&t1, &t2] {
        ok(&["train", "--config", s(&config), "--seed", "3", "--data", s(&events), "--out", s(t)]);
    }
    for f in ["checkpoint.json", "train_log.json"] {
        assert_eq!(read(&t1.join(f)), read(&t2.join(f)), "{f}");
    }
    let log = json(&t1.join("train_log.json"));
    assert_eq!(log["seed"], 3);
    assert_eq!(log["config"]["seed"], 3);
    assert!(!log["epochs"].as_array().unwrap().is_empty());

    let metrics_path = tmp.path().join("metrics.json");
    let out = ok(&[
        "eval",
        "--checkpoint",
        s(&t1.join("checkpoint.json")),
        "--data",
        s(&events),
        "--out",
        s(&metrics_path),
    ]);
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let written = json(&metrics_path);
    assert_eq!(printed, written);
    for key in ["nll", "event_time_nll", "event_type_accuracy"] {
        assert!(written[key].is_f64(), "{key} missing");
    }
    assert_eq!(written["split"], "test");
    assert_eq!(written["config"]["seed"], 3);

    let (d1, d2) = (tmp.path().join("d1.json"), tmp.path().join("d2.json"));
    for d in [&d1, &d2] {
        ok(&[
            "detect",
            "--config",
            s(&config),
            "--seed",
            "3",
            "--checkpoint",
            s(&t1.join("checkpoint.json")),
            "--data",
            s(&events),
            "--labels",
            s(&data.join("labels.json")),
            "--out",
            s(d),
        ]);
    }
    assert_eq!(read(&d1), read(&d2));
}

#[test]
fn full_pipeline_on_the_planted_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let config = desk_config();
    let data = tmp.path().join("data");
    let train = tmp.path().join("train");
    let detect = tmp.path().join("detect.json");
    let influence = tmp.path().join("influence");
    let report = tmp.path().join("report");
    let events = data.join("events.jsonl");
    let checkpoint = train.join("checkpoint.json");
    ok(&["simulate", "--config", s(&config), "--out", s(&data)]);
    ok(&["train", "--config", s(&config), "--data", s(&events), "--out", s(&train)]);
    ok(&[
        "detect",
        "--config",
        s(&config),
        "--checkpoint",
        s(&checkpoint),
        "--data",
        s(&events),
        "--labels",
        s(&data.join("labels.json")),
        "--supervised",
        "--out",
        s(&detect),
    ]);
    let rep = json(&detect);
    let auc = rep["metrics"]["auc"].as_f64().unwrap();
    assert!(auc >= 0.85, "AUC {auc}");
    assert!(rep["supervised"]["metrics"]["auc"].is_f64());
    assert_eq!(rep["config"]["cluster"]["k"], 2);

    ok(&["influence", "--config", s(&config), "--checkpoint", s(&checkpoint), "--data", s(&events), "--out", s(&influence)]);
    let pr = json(&influence.join("pagerank.json"));
    assert_eq!(pr["ranking"].as_array().unwrap().len(), 10);
    let csv = fs::read_to_string(influence.join("influence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 31);

    ok(&[
        "report",
        "--train-dir",
        s(&train),
        "--detect",
        s(&detect),
        "--influence-dir",
        s(&influence),
        "--out",
        s(&report),
    ]);
    for f in ["summary.json", "epochs.tsv", "roc.tsv", "heatmap.tsv"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let roc = fs::read_to_string(report.join("roc.tsv")).unwrap();
    assert!(roc.lines().last().unwrap().starts_with("1\t1"));
    let summary = json(&report.join("summary.json"));
    assert_eq!(summary["detection"]["metrics"]["auc"].as_f64(), Some(auc));
}

#[test]
fn failures_exit_non_zero_and_leave_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[train]\nbatchsize = 3\n").unwrap();
    let r = amdn(&["simulate", "--config", s(&bad), "--out", s(&out_dir)]);
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("schema"));
    assert!(!out_dir.exists());

    let r = amdn(&["train", "--data", s(&tmp.path().join("missing.jsonl")), "--out", s(&out_dir)]);
    assert!(!r.status.success());
    assert!(!out_dir.exists());

    assert!(!amdn(&["simulate", "--out", s(&out_dir), "--bogus"]).status.success());
    assert!(!amdn(&["frobnicate"]).status.success());

    // a run that dies after reading its inputs removes what it created
    let config = small_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["simulate", "--config", s(&config), "--out", s(&data)]);
    let garbage = tmp.path().join("ck.json");
    fs::write(&garbage, "{\"format\": \"something-else\"}").unwrap();
    let report = tmp.path().join("nested/report.json");
    let r = amdn(&[
        "detect",
        "--checkpoint",
        s(&garbage),
        "--data",
        s(&data.join("events.jsonl")),
        "--out",
        s(&report),
    ]);
    assert!(!r.status.success());
    assert!(!tmp.path().join("nested").exists());
    let r = amdn(&["detect", "--checkpoint", s(&garbage), "--data", s(&data.join("events.jsonl")), "--supervised", "--out", s(&report)]);
    assert!(String::from_utf8_lossy(&r.stderr).contains("--labels"));
}

#[test]
fn help_documents_every_subcommand() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["simulate", "train", "eval", "detect", "influence", "report"] {
        assert!(text.contains(cmd), "{cmd}");
    }
    let out = ok(&["detect", "--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for flag in ["--checkpoint", "--data", "--labels", "--supervised", "--out", "--seed", "--config"] {
        assert!(text.contains(flag), "{flag}");
    }
}

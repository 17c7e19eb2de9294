use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use replaylab::streams::{consecutive_partition, load_csv_file};

const MINIMAL: &str = r#"{
  "schema_version": 1,
  "stream": {"kind": "synthetic", "spec": {"feature_dim": 4, "num_classes": 4, "classes_per_task": 2,
             "train_per_class": 10, "test_per_class": 10}},
  "train": {"epochs_per_task": 2, "hidden_dims": [8], "embedding_dim": 4, "buffer_capacity": 20}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_replaylab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn all_files(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p
                    .strip_prefix(root)
                    .unwrap()
                    .to_str()
                    .unwrap()
                    .replace('\\', "/");
                out.insert(rel);
            }
        }
    }
    out
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn listed(m: &serde_json::Value) -> BTreeSet<String> {
    m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect()
}

#[test]
fn minimal_run_writes_four_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let out = tmp.path().join("out");
    let o = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = all_files(&out);
    assert_eq!(files.len(), 4, "{files:?}");
    let mut expected = listed(&manifest(&out));
    expected.insert("manifest.json".into());
    assert_eq!(files, expected);
}

#[test]
fn every_output_is_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let body = MINIMAL.replace(
        "\"schema_version\": 1,",
        "\"schema_version\": 1, \"seeds\": [4, 5],\n  \"diagnostics\": {\"drift\": true, \"diversity\": true, \"alignment\": true, \"retrieval_log\": true},",
    );
    let cfg = write_config(tmp.path(), "c.json", &body);
    let out = tmp.path().join("out");
    let o = run(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--dump-model",
        "--dump-buffer",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let mut expected = listed(&m);
    expected.insert("manifest.json".into());
    assert_eq!(all_files(&out), expected);
    assert_eq!(m["runs"].as_array().unwrap().len(), 2);
    for name in [
        "drift.csv",
        "diversity.csv",
        "alignment.csv",
        "retrieval.csv",
        "model.json",
        "buffer.csv",
    ] {
        assert!(expected.contains(&format!("seed_4/{name}")), "{name}");
    }
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("seed_4/model.json")).unwrap()).unwrap();
    assert_eq!(model["layers"].as_array().unwrap().len(), 2);
    let buffer = fs::read_to_string(out.join("seed_4/buffer.csv")).unwrap();
    assert_eq!(buffer.lines().count(), 21);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    for name in ["a", "b"] {
        let o = run(&[
            "run",
            "--config",
            s(&cfg),
            "--out",
            s(&tmp.path().join(name)),
            "--seeds",
            "0,9",
        ]);
        assert!(o.status.success());
    }
    for f in [
        "seed_0/metrics.json",
        "seed_9/metrics.json",
        "seed_9/proxies.json",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn missing_csv_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"schema_version": 1, "stream": {"kind": "csv", "path": "nowhere.csv", "partition": [[0, 1]]}}"#,
    );
    let o = run(&["run", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.csv"));
}

#[test]
fn invalid_config_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "c.json",
        "{\n  \"schema_version\": 1,\n  \"stream\": 7\n}",
    );
    let o = run(&["run", "--config", s(&cfg)]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");

    let cfg = write_config(
        tmp.path(),
        "v.json",
        &MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2"),
    );
    let o = run(&["run", "--config", s(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema_version"));
}

#[test]
fn sweep_counts_rows_and_restarts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let out = tmp.path().join("sweep");
    let args = [
        "sweep",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--ratios",
        "10:0,5:5,0:10,random",
        "--seeds",
        "0,1,2",
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("12 cells run, 0 reused"));
    let rows = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 13);
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
    let mut expected = listed(&manifest(&out));
    expected.insert("manifest.json".into());
    assert_eq!(all_files(&out), expected);

    let o = run(&args);
    assert!(String::from_utf8_lossy(&o.stdout).contains("0 cells run, 12 reused"));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap(), rows);

    // an interrupted cell is recomputed
    fs::remove_file(out.join("ratio_5-5/seed_1/metrics.json")).unwrap();
    let o = run(&args);
    assert!(String::from_utf8_lossy(&o.stdout).contains("1 cells run, 11 reused"));
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap(), rows);
}

#[test]
fn sweep_is_independent_of_workers() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    for (name, jobs) in [("one", "1"), ("many", "4")] {
        let o = run(&[
            "sweep",
            "--config",
            s(&cfg),
            "--out",
            s(&tmp.path().join(name)),
            "--seeds",
            "0,1",
            "--jobs",
            jobs,
        ]);
        assert!(o.status.success());
    }
    for f in [
        "sweep.csv",
        "sweep_summary.csv",
        "ratio_7-3/seed_1/metrics.json",
        "manifest.json",
    ] {
        assert_eq!(
            fs::read(tmp.path().join("one").join(f)).unwrap(),
            fs::read(tmp.path().join("many").join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn sweep_rejects_bad_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    for bad in ["6:5", "5:5,5:5", "half"] {
        let o = run(&[
            "sweep",
            "--config",
            s(&cfg),
            "--ratios",
            bad,
            "--out",
            s(&tmp.path().join("x")),
        ]);
        assert!(!o.status.success(), "{bad}");
    }
}

#[test]
fn gen_data_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a.csv");
    let b = tmp.path().join("b.csv");
    assert!(run(&["gen-data", "--out", s(&a)]).status.success());
    assert!(run(&["gen-data", "--out", s(&b)]).status.success());
    let text = fs::read_to_string(&a).unwrap();
    // 20 classes with 50 train and 50 test samples each
    assert_eq!(text.lines().count(), 1 + 20 * 100);
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let classes: Vec<usize> = (0..20).collect();
    let tasks = load_csv_file(&a, &consecutive_partition(&classes, 2)).unwrap();
    assert_eq!(tasks.len(), 10);
    let regenerated = replaylab::streams::generate_synthetic(&Default::default()).unwrap();
    assert_eq!(tasks, regenerated);

    let spec = write_config(
        tmp.path(),
        "spec.json",
        r#"{"num_classes": 4, "feature_dim": 3, "seed": 8}"#,
    );
    let c = tmp.path().join("c.csv");
    assert!(run(&["gen-data", "--config", s(&spec), "--out", s(&c)])
        .status
        .success());
    assert_eq!(fs::read_to_string(&c).unwrap().lines().count(), 1 + 4 * 100);
    let bad = write_config(tmp.path(), "bad.json", r#"{"classes": 4}"#);
    assert!(!run(&["gen-data", "--config", s(&bad), "--out", s(&c)])
        .status
        .success());
}

#[test]
fn csv_stream_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_config(
        tmp.path(),
        "spec.json",
        r#"{"num_classes": 4, "feature_dim": 3, "train_per_class": 8, "test_per_class": 8}"#,
    );
    let data = tmp.path().join("data.csv");
    assert!(run(&["gen-data", "--config", s(&spec), "--out", s(&data)])
        .status
        .success());
    let cfg = write_config(
        tmp.path(),
        "c.json",
        r#"{"schema_version": 1, "stream": {"kind": "csv", "path": "data.csv", "partition": [[0, 1], [2, 3]]},
            "train": {"epochs_per_task": 1, "hidden_dims": [6], "embedding_dim": 3}, "output_dir": "res"}"#,
    );
    let o = run(&["run", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acc = fs::read_to_string(tmp.path().join("res/seed_0/accuracy.csv")).unwrap();
    assert_eq!(acc.lines().count(), 3);
}

#[test]
fn report_merges_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.json", MINIMAL);
    let imir = write_config(
        tmp.path(),
        "imir.json",
        &MINIMAL.replace(
            "\"buffer_capacity\": 20",
            "\"buffer_capacity\": 20, \"strategy\": {\"kind\": \"imir\", \"pool_size\": 20, \"replay_budget\": 10}",
        ),
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["run", "--config", s(&cfg), "--out", s(&a)])
        .status
        .success());
    assert!(run(&["run", "--config", s(&imir), "--out", s(&b)])
        .status
        .success());

    let o = run(&["report", s(&a)]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);

    let merged = tmp.path().join("merged.csv");
    assert!(run(&["report", s(&a), s(&b), "--out", s(&merged)])
        .status
        .success());
    let text = fs::read_to_string(&merged).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let cols = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == cols));
    assert!(lines[1].contains("balanced") && lines[2].contains("imir"));
    let fp = |l: &str| l.split(',').nth(7).unwrap().to_string();
    assert_ne!(fp(lines[1]), fp(lines[2]));

    fs::write(b.join("manifest.json"), "{ not json").unwrap();
    let o = run(&["report", s(&a), s(&b)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&b)));

    let o = run(&["report", s(&tmp.path().join("missing"))]);
    assert!(!o.status.success());
}

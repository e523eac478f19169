use std::path::Path;
use std::process::{Command, Output};

fn meshres(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meshres"))
        .args(args)
        .env("MESHRES_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = meshres(args);
    assert!(
        out.status.success(),
        "meshres {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(meshres(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(meshres(&["decimate", "--in", "x.obj"]).status.code(), Some(1));
    let help = meshres(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for cmd in ["decimate", "featurize", "augment", "train", "predict", "upsample", "evaluate", "sweep", "synth"] {
        assert!(text.contains(cmd), "help lists {cmd}");
    }
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = meshres(&["evaluate", "--gt", "/nonexistent/gt.json", "--pred", "/nonexistent/p.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let out = meshres(&["decimate", "--in", "/nonexistent.obj", "--target", "10", "--out", p(&dir.path().join("o.obj"))]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.json"), "{not json").unwrap();
    let bad = dir.path().join("bad.json");
    let out = meshres(&["evaluate", "--gt", p(&bad), "--pred", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn evaluate_identical_files_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("l.json");
    std::fs::write(&labels, r#"{"mode": "face", "labels": [0, 0, 1, 3, 3, 7, 7, 7]}"#).unwrap();
    let out = ok(&["evaluate", "--gt", p(&labels), "--pred", p(&labels)]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Input Size,OA,DSC,SEN,PPV,Inference Time (ms)");
    assert_eq!(lines[1], "8,1,1,1,1,");
    assert_eq!(lines[3], "Resolution,BG,T1,T2,T3,T4,T5,T6,T7");
    assert_eq!(lines[4], "8,1,1,,1,,,,1");

    let report = dir.path().join("r.jsonl");
    ok(&["evaluate", "--gt", p(&labels), "--pred", p(&labels), "--out", p(&report), "--format", "json-lines"]);
    let first: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&report).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["DSC"], 1.0);
}

#[test]
fn smoke_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = d.join("synth");
    ok(&["-q", "synth", "--count", "2", "--seed", "7", "--cells", "1500", "--out-dir", p(&synth)]);
    assert!(synth.join("jaw_000.obj").exists() && synth.join("jaw_001.json").exists());

    let feats = d.join("feats");
    for id in ["jaw_000", "jaw_001"] {
        let low = d.join(format!("{id}_800.obj"));
        let low_labels = d.join(format!("{id}_800.json"));
        ok(&[
            "decimate",
            "--in",
            p(&synth.join(format!("{id}.obj"))),
            "--labels",
            p(&synth.join(format!("{id}.json"))),
            "--target",
            "800",
            "--out",
            p(&low),
            "--out-labels",
            p(&low_labels),
        ]);
        ok(&["featurize", "--in", p(&low), "--labels", p(&low_labels), "--out", p(&feats.join(format!("{id}.mrft")))]);
    }
    let model = d.join("model.mrck");
    let cfg = d.join("train.json");
    std::fs::write(&cfg, r#"{"model": {"k_neighbors": 8}, "train": {"batch_size": 1}}"#).unwrap();
    ok(&[
        "train", "--data", p(&feats), "--config", p(&cfg), "--epochs", "5", "--seed", "3", "--out", p(&model),
        "--history", p(&d.join("history.json")),
    ]);
    let history: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("history.json")).unwrap()).unwrap();
    assert_eq!(history.as_array().unwrap().len(), 5);

    let pred = d.join("pred.json");
    ok(&["predict", "--model", p(&model), "--in", p(&feats.join("jaw_000.mrft")), "--out", p(&pred)]);
    let first = std::fs::read(&pred).unwrap();
    ok(&["predict", "--model", p(&model), "--in", p(&feats.join("jaw_000.mrft")), "--out", p(&pred)]);
    assert_eq!(first, std::fs::read(&pred).unwrap());
    let doc: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(doc["labels"].as_array().unwrap().len(), doc["probabilities"].as_array().unwrap().len());

    let report = d.join("report.csv");
    ok(&["evaluate", "--gt", p(&d.join("jaw_000_800.json")), "--pred", p(&pred), "--out", p(&report)]);
    assert!(std::fs::read_to_string(&report).unwrap().starts_with("Input Size,OA,DSC"));

    let up = d.join("up.json");
    ok(&[
        "upsample", "--low", p(&d.join("jaw_000_800.obj")), "--pred", p(&pred), "--high", p(&synth.join("jaw_000.obj")),
        "--out", p(&up), "--k", "3",
    ]);
    ok(&["evaluate", "--gt", p(&synth.join("jaw_000.json")), "--pred", p(&up)]);

    let aug = d.join("aug");
    ok(&["augment", "--in", p(&synth.join("jaw_000.obj")), "--labels", p(&synth.join("jaw_000.json")), "--copies", "2", "--seed", "1", "--out-dir", p(&aug)]);
    let once = std::fs::read(aug.join("jaw_000_aug1.obj")).unwrap();
    ok(&["augment", "--in", p(&synth.join("jaw_000.obj")), "--labels", p(&synth.join("jaw_000.json")), "--copies", "2", "--seed", "1", "--out-dir", p(&aug)]);
    assert_eq!(once, std::fs::read(aug.join("jaw_000_aug1.obj")).unwrap());
}

#[test]
fn tiny_sweep_layout() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["-q", "synth", "--count", "5", "--seed", "2", "--cells", "700", "--out-dir", p(&data)]);
    let cfg = d.join("experiment.json");
    std::fs::write(
        &cfg,
        r#"{"resolutions": [300], "eval_resolutions": [600], "augment": {"copies": 1},
            "model": {"k_neighbors": 8}, "train": {"epochs": 2, "batch_size": 2}}"#,
    )
    .unwrap();
    let runs = d.join("runs");
    ok(&["-q", "sweep", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(&runs), "--seed", "4"]);
    for f in ["model.mrck", "pred_native.json", "pred_to_600.json", "report.csv", "history.json"] {
        assert!(runs.join("300").join(f).exists(), "missing {f}");
    }
    let report = std::fs::read_to_string(runs.join("report.csv")).unwrap();
    let labels: Vec<&str> = report.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, vec!["300", "300 (to 600)"]);

    // a second run resumes from the checkpoint and reproduces the metrics
    let before = std::fs::read(runs.join("300").join("pred_to_600.json")).unwrap();
    ok(&["-q", "sweep", "--config", p(&cfg), "--data-dir", p(&data), "--out-dir", p(&runs), "--seed", "4"]);
    assert_eq!(before, std::fs::read(runs.join("300").join("pred_to_600.json")).unwrap());
}

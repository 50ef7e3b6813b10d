use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn masscast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_masscast"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn small_synth(dir: &Path, recordings: usize) -> String {
    let spec = "frames = 1\nwidth = 200\nheight = 150\nfocal_px = 150.0\n";
    fs::write(dir.join("spec.toml"), spec).unwrap();
    let out = path(dir, "data");
    let n = recordings.to_string();
    let o = masscast(&["synth", "--spec", &path(dir, "spec.toml"), "--recordings", &n, "--out", &out]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn exit_codes() {
    assert_eq!(masscast(&[]).status.code(), Some(1));
    assert_eq!(masscast(&["--help"]).status.code(), Some(0));
    assert_eq!(masscast(&["extract", "--bogus"]).status.code(), Some(1));
    assert_eq!(masscast(&["--threads", "0", "gradcheck"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = path(dir.path(), "nope.csv");
    let o = masscast(&["score", "--pred", &missing, "--truth", &missing, "--out", &path(dir.path(), "r.txt")]);
    assert_eq!(o.status.code(), Some(2));
    let o = masscast(&[
        "score", "--pred", &missing, "--pred", &missing, "--truth", &missing, "--out", &path(dir.path(), "r.txt"),
    ]);
    assert_eq!(o.status.code(), Some(1));

    fs::write(dir.path().join("model.bin"), b"not a model").unwrap();
    let data = small_synth(dir.path(), 1);
    let o = masscast(&[
        "predict", "--model", &path(dir.path(), "model.bin"), "--recordings", &data, "--out", &path(dir.path(), "p.csv"),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn empty_detections_warn_but_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), 3);
    fs::write(Path::new(&data).join("syn00001").join("detections.jsonl"), "").unwrap();
    let o = masscast(&["extract", "--recordings", &data, "--out", &path(dir.path(), "p.bin")]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no detections"));
    let summary = fs::read_to_string(dir.path().join("p.summary.txt")).unwrap();
    assert!(summary.contains("recordings=3\npatches=2\n"), "{summary}");
    assert!(dir.path().join("extract.manifest.json").is_file());
}

#[test]
fn score_combines_splits() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["score".to_string()];
    for (name, s) in [("public", 0.5314f64), ("private", 0.4614)] {
        let truth = 80.0;
        let est = truth * (1.0 - s.ln());
        fs::write(dir.path().join(format!("{name}.csv")), format!("recording_id,mass_g\n{name}1,{est}\n")).unwrap();
        fs::write(dir.path().join(format!("{name}_truth.csv")), format!("recording_id,mass_g,class\n{name}1,{truth},cup\n")).unwrap();
        args.extend(["--pred".into(), path(dir.path(), &format!("{name}.csv"))]);
        args.extend(["--truth".into(), path(dir.path(), &format!("{name}_truth.csv"))]);
    }
    args.extend(["--out".into(), path(dir.path(), "report.txt")]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let o = masscast(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(text.contains("combination score_% 49.64"), "{text}");
    let kv = fs::read_to_string(dir.path().join("report.kv")).unwrap();
    let combined: f64 = kv
        .lines()
        .find_map(|l| l.strip_prefix("combination.score="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((100.0 * combined - 49.64).abs() < 0.005, "{combined}");
}

#[test]
fn cv3_writes_three_models_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_synth(dir.path(), 18);
    let patches = path(dir.path(), "work/patches.bin");
    assert!(masscast(&["extract", "--recordings", &data, "--out", &patches]).status.success());
    let o = masscast(&[
        "train", "--patches", &patches, "--mode", "cv3", "--epochs", "1", "--copies", "0", "--batch-size", "4",
        "--out", &path(dir.path(), "work/model.bin"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for i in 1..=3 {
        assert!(dir.path().join(format!("work/model.fold{i}.bin")).is_file());
        assert!(dir.path().join(format!("work/model.fold{i}.history.csv")).is_file());
    }
    let report = fs::read_to_string(dir.path().join("work/model.cv3_report.txt")).unwrap();
    assert_eq!(report.matches("fold F").count(), 3, "{report}");
    assert!(report.contains("aggregate score_%"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("work/train.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 7);
}

#[test]
fn gradcheck_passes() {
    let o = masscast(&["gradcheck", "--seeds", "2", "--model-seeds", "1", "--coords", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.lines().count() >= 8 && !out.contains("FAIL"), "{out}");
}

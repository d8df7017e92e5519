use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oofstack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oofstack"))
        .args(args)
        .output()
        .expect("spawn oofstack")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

const SMALL_RUN: &str = "[seeds]\nvalues = [1, 2]\n[meta]\nn_iter = 2\n";

fn small_run(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, SMALL_RUN).unwrap();
    let out = dir.join("run");
    let o = oofstack(&["run", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn run_writes_declared_artifacts_and_audits_clean() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path());
    for f in [
        "report.json",
        "predictions.csv",
        "provenance.jsonl",
        "audit_log.json",
        "roc.csv",
        "pr.csv",
        "dca.csv",
        "reliability.csv",
        "ece.json",
    ] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seeds"]["values"], serde_json::json!([1, 2]));
    assert_eq!(report["config"]["splits"]["k_out"], 3);

    let o = oofstack(&["audit", "--run", p(&run)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["violations"], 0);
}

#[test]
fn tampered_provenance_fails_audit_naming_the_row() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path());
    let path = run.join("provenance.jsonl");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut rec: Value = serde_json::from_str(&lines[3]).unwrap();
    let study = rec["study"].clone();
    rec["trainer_index_set"].as_array_mut().unwrap().push(study.clone());
    lines[3] = rec.to_string();
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    let o = oofstack(&["audit", "--run", p(&run)]);
    assert_eq!(o.status.code(), Some(1));
    let v = stdout_json(&o);
    assert_eq!(v["violations"], 1);
    assert_eq!(v["details"][0]["row"], rec["row"]);
    assert_eq!(v["details"][0]["indices"], serde_json::json!([study]));
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.toml");
    for cmd in ["run", "synth"] {
        let o = oofstack(&[cmd, "--config", p(&missing), "--out", p(dir.path())]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
        assert!(stderr_json(&o)["kind"].is_string());
    }
}

#[test]
fn bad_config_and_usage_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[seeds]\nvalues = []\n").unwrap();
    let o = oofstack(&["run", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "config");
    assert_eq!(oofstack(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(oofstack(&[]).status.code(), Some(2));
    assert_eq!(oofstack(&["preprocess", "--in", "x", "--out", "y", "--roi", "1,2"]).status.code(), Some(2));
}

#[test]
fn runtime_failure_is_exit_1_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[cohort]\ncsv = \"tiny.csv\"\n").unwrap();
    std::fs::write(dir.path().join("tiny.csv"), "id,label,f0\na,1,0.5\nb,1,0.4\nc,0,0.1\n").unwrap();
    let o = oofstack(&["run", "--config", p(&cfg), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "degenerate_labels");

    let o = oofstack(&["audit", "--run", p(&dir.path().join("nowhere"))]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "io");
}

#[test]
fn synth_writes_cohort_and_generator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "n = 90\nseed = 4\n").unwrap();
    let out = dir.path().join("s");
    let o = oofstack(&["synth", "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("cohort.csv")).unwrap();
    assert_eq!(csv.lines().count(), 91);
    assert_eq!(csv.lines().filter(|l| l.split(',').nth(1) == Some("1")).count(), 48);
    let gen: Value = serde_json::from_str(&std::fs::read_to_string(out.join("generator.json")).unwrap()).unwrap();
    assert_eq!(gen["positives"], 48);
    assert!(gen["analytic_bayes_auroc"].as_f64().unwrap() > 0.5);

    let run_cfg = dir.path().join("run.toml");
    std::fs::write(&run_cfg, format!("[cohort]\ncsv = \"s/cohort.csv\"\n{SMALL_RUN}")).unwrap();
    let o = oofstack(&["run", "--config", p(&run_cfg), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn explain_and_report_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path());
    let x = dir.path().join("x");
    let o = oofstack(&["explain", "--run", p(&run), "--background", "8", "--out", p(&x)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let shap = std::fs::read_to_string(x.join("shap.csv")).unwrap();
    let header: Vec<&str> = shap.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 15);
    assert_eq!(header[3], "backbone1_TAV");
    assert_eq!(shap.lines().count(), 1 + 2 * 90);
    for line in shap.lines().skip(1) {
        let v: Vec<f64> = line.split(',').skip(3).map(|s| s.parse().unwrap()).collect();
        let total: f64 = v[..10].iter().sum();
        assert!((v[10] + total - v[11]).abs() < 1e-6);
    }
    assert_eq!(std::fs::read_to_string(x.join("shap_global.csv")).unwrap().lines().count(), 11);

    let a = dir.path().join("rep_a");
    let b = dir.path().join("rep_b");
    for out in [&a, &b] {
        let o = oofstack(&["report", "--runs", p(&run), "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["probabilities.csv", "roc.csv", "pr.csv", "dca.csv", "reliability.csv", "ece.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(a.join("probabilities.csv")).unwrap().lines().count(), 91);
}

#[test]
fn preprocess_writes_clip_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    for t in 0..3u8 {
        let mut bytes = b"P5\n16 16\n255\n".to_vec();
        bytes.extend((0..256u32).map(|i| (i as u8).wrapping_add(t)));
        std::fs::write(frames.join(format!("frame_{t:04}.pgm")), bytes).unwrap();
    }
    let out = dir.path().join("study.clip");
    let o = oofstack(&["preprocess", "--in", p(&frames), "--out", p(&out), "--roi", "0,0,16,16", "--frames", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let side: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("study.clip.json")).unwrap()).unwrap();
    assert_eq!(side["shape"], serde_json::json!([3, 4, 224, 224]));
    assert_eq!(side["source_frame_count"], 3);
    assert_eq!(std::fs::metadata(&out).unwrap().len(), 3 * 4 * 224 * 224 * 4);

    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let o = oofstack(&["preprocess", "--in", p(&empty), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr_json(&o)["kind"], "decode");
}

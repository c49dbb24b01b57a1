use std::process::Command;

use serde_json::Value;

fn flavornet(out: &std::path::Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_flavornet"))
        .arg("--out")
        .arg(out)
        .arg("-q")
        .args(args)
        .output()
        .expect("binary runs")
}

fn error_json(stderr: &[u8]) -> Value {
    let text = String::from_utf8_lossy(stderr);
    let line = text.lines().last().expect("error line");
    serde_json::from_str(line).expect("machine-readable error")
}

#[test]
fn gradcheck_all_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = flavornet(tmp.path(), &["gradcheck", "--all", "--trials", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows: Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("gradcheck-seed1/metrics.json")).unwrap()).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 5);
    assert!(rows.as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn unknown_flavor_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = flavornet(tmp.path(), &["rmsg", "run", "--flavor", "transformer"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("transformer"));
}

#[test]
fn missing_data_is_a_load_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = flavornet(
        tmp.path(),
        &["--values", "/nonexistent/v.csv", "--adjacency", "/nonexistent/a.csv", "traffic", "baselines"],
    );
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out.stderr);
    assert_eq!(e["error"], "load");
    assert!(e["message"].as_str().unwrap().contains("v.csv"));
    assert!(tmp.path().join("traffic-baselines-mpnn-seed1/error.json").exists());
}

#[test]
fn bad_override_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = flavornet(tmp.path(), &["--set", "rmsg.hidden=wide", "rmsg", "run"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out.stderr)["error"], "config");
}

#[test]
fn config_file_is_copied_verbatim() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    let text = "flavor = \"average\"\nseed = 2\n\n[rmsg]\ntrain_samples = 64\ntest_samples = 64\nval_samples = 8\n";
    std::fs::write(&cfg, text).unwrap();
    let out = flavornet(tmp.path(), &["--config", cfg.to_str().unwrap(), "rmsg", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("rmsg-run-average-seed2");
    assert_eq!(std::fs::read_to_string(dir.join("config.source.toml")).unwrap(), text);
    let m: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["model"], "average");
    assert!(m["mean"]["r2"].as_f64().unwrap().abs() < 0.2);
    assert!(dir.join("metrics.csv").exists() && dir.join("run.log").exists());
}

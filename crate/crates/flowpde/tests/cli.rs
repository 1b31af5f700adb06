use std::fs;
use std::process::{Command, Output};

fn flowpde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowpde")).args(args).output().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = flowpde(&["noise", "--bogus"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn out_without_manifest_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_string_lossy().into_owned();
    let out = flowpde(&["--out", &d, "kernels"]);
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn bad_parameters_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_string_lossy().into_owned();
    for args in [
        vec!["noise", "--model", "phi4_desk", "--nu", "1.5", "--out", &d],
        vec!["renorm", "--model", "no_such_model", "--nu", "0.1", "--out", &d],
        vec!["universality", "--plan", "/nonexistent/plan.json", "--out", &d],
    ] {
        let out = flowpde(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn renorm_writes_counterterms_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ct = dir.path().join("ct.json");
    let out = flowpde(&["renorm", "--model", "phi4_desk", "--nu", "0.2", "--out", &ct.to_string_lossy()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(&ct).unwrap()).unwrap();
    let mass = json["entries"].as_array().unwrap().iter().find(|e| e["i"] == 1 && e["m"] == 1).unwrap();
    assert!(mass["value"].as_f64().unwrap() > 0.0);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn norms_of_a_simulated_field() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let s = flowpde(&["simulate", "--model", "phi4_desk", "--nu", "0.5", "--horizon", "0.25", "--out", &sim.to_string_lossy()]);
    assert!(s.status.success(), "{}", String::from_utf8_lossy(&s.stderr));
    let field = sim.join("trajectory.fld");
    let norms = dir.path().join("norms");
    let n = flowpde(&["norms", "--field", &field.to_string_lossy(), "--alpha", "-0.3", "--out", &norms.to_string_lossy()]);
    assert!(n.status.success(), "{}", String::from_utf8_lossy(&n.stderr));
    let csv = fs::read_dir(&norms).unwrap().filter_map(|e| e.ok()).any(|e| e.path().extension().is_some_and(|x| x == "csv"));
    assert!(csv);
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn netpass(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netpass")).args(args).current_dir(cwd).output().unwrap()
}

fn scenario(name: &str) -> String {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    root.join(name).canonicalize().unwrap().display().to_string()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

fn scalar(a: f64, alpha1: f64, alpha2: f64, d11: f64, extra: &str) -> String {
    format!(
        r#"{{
  "plant": {{ "a": [[{a}]], "b1": [[1.0]], "b2": [[1.0]], "c1": [[0.5]], "d11": [[{d11}]], "d12": [[0.0]] }},
  "loss": {{ "alpha1": {alpha1}, "alpha2": {alpha2} }}{extra}
}}"#
    )
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn analyze_without_controller_is_indeterminate_on_unstable_plant() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["analyze", "--config", &scenario("scalar_lossy.json"), "--out", "r.json"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let r = read_json(&tmp.path().join("r.json"));
    assert_eq!(r["status"], "indeterminate");
}

#[test]
fn analyze_passive_scalar_reports_max_eta() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["analyze", "--config", &scenario("scalar_passive.json"), "--out", "r.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&tmp.path().join("r.json"));
    let eta = r["results"]["analyze"]["passivity"]["eta"].as_f64().unwrap();
    assert!((eta - 2.0 / 3.0).abs() <= 2e-3, "eta = {eta}");
}

#[test]
fn analyze_periodic_scenario_certifies_stability() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["analyze", "--config", &scenario("two_state_periodic.json")], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["results"]["analyze"]["sms"]["rho"].as_f64().unwrap() < 1.0);
}

#[test]
fn synthesize_then_report_round_trip() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["synthesize", "--config", &scenario("scalar_lossy.json"), "--out", "s.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&tmp.path().join("s.json"));
    let k = r["results"]["synthesize"]["certified"]["k"][0][0].as_f64().unwrap();
    // 0.2·1.44 + 0.8(1.2 + K)² < 1
    assert!(0.8 * (1.2 + k).powi(2) + 0.288 < 1.0);

    let o = netpass(&["report", "s.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("consistent"));

    let o = netpass(&["simulate", "--config", &scenario("scalar_lossy.json"), "--gain-from", "s.json", "--out", "m.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = read_json(&tmp.path().join("m.json"));
    assert_eq!(m["results"]["simulate"]["gain"][0][0].as_f64().unwrap(), k);
}

#[test]
fn tampered_certificate_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["synthesize", "--config", &scenario("scalar_lossy.json"), "--out", "s.json"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let path = tmp.path().join("s.json");
    let mut r = read_json(&path);
    let x = &mut r["results"]["synthesize"]["certified"]["synthesis"]["variables"]["X"][0][0];
    *x = Value::from(x.as_f64().unwrap() * 1.1);
    fs::write(&path, serde_json::to_string_pretty(&r).unwrap()).unwrap();
    let o = netpass(&["report", "s.json"], tmp.path());
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("MISMATCH"));
}

#[test]
fn empty_report_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "empty.json", "");
    assert_eq!(code(&netpass(&["report", &p], tmp.path())), 1);
}

#[test]
fn malformed_config_names_location() {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "bad.json", "{\n  \"plant\": {\n    \"a\": [[1.0]],\n    \"bogus\": 1\n  }\n}");
    let o = netpass(&["analyze", "--config", &p], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn non_passive_feedthrough_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "c.json", &scalar(0.5, 0.0, 0.0, 0.0, ""));
    let o = netpass(&["synthesize", "--config", &p, "--eta", "0.1"], tmp.path());
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn hopeless_loss_is_indeterminate() {
    let tmp = TempDir::new().unwrap();
    let p = write(tmp.path(), "c.json", &scalar(2.0, 0.5, 0.0, 1.0, ""));
    let o = netpass(&["analyze", "--config", &p, "--out", "a.json"], tmp.path());
    assert_eq!(code(&o), 2);
    let r = read_json(&tmp.path().join("a.json"));
    assert!((r["results"]["analyze"]["sms"]["rho"].as_f64().unwrap() - 4.0).abs() < 1e-12);
    let o = netpass(&["synthesize", "--config", &p, "--eta", "0.1"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn periodic_synthesis_is_refused() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["synthesize", "--config", &scenario("two_state_periodic.json"), "--eta", "0.1"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("full-packet"), "{}", stderr(&o));
}

#[test]
fn lossless_zero_input_from_origin_stays_at_origin() {
    let tmp = TempDir::new().unwrap();
    let extra = r#",
  "gain": [[0.0]],
  "simulation": { "signal": { "kind": "zero" }, "horizon": 20, "trials": 5, "dump_limit": 2 }"#;
    let p = write(tmp.path(), "c.json", &scalar(0.9, 0.0, 0.0, 1.0, extra));
    let o = netpass(&["simulate", "--config", &p, "--out", "z.json", "--dump-traces"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("z.ensemble.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let cols: Vec<f64> = line.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!(cols.iter().all(|v| *v == 0.0), "{line}");
    }
    let traces: Vec<_> = fs::read_dir(tmp.path().join("z.traces")).unwrap().collect();
    assert_eq!(traces.len(), 2);
}

#[test]
fn repeated_seeds_give_identical_artifacts() {
    let runs: Vec<(Value, String)> = (0..2)
        .map(|_| {
            let tmp = TempDir::new().unwrap();
            let o = netpass(
                &["simulate", "--config", &scenario("two_state_periodic.json"), "--seed", "5", "--out", "m.json", "--dump-traces"],
                tmp.path(),
            );
            assert_eq!(code(&o), 0, "{}", stderr(&o));
            let mut r = read_json(&tmp.path().join("m.json"));
            r.as_object_mut().unwrap().remove("timing_ms");
            let trace = fs::read_to_string(tmp.path().join("m.traces/trial-00003.csv")).unwrap();
            (r, trace)
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn committed_schema_is_current() {
    let tmp = TempDir::new().unwrap();
    let o = netpass(&["schema"], tmp.path());
    assert_eq!(code(&o), 0);
    let committed = fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schema/scenario.schema.json")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), committed);
}

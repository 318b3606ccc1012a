use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stcns(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcns"))
        .args(args)
        .current_dir(cwd)
        .env("STCNS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, r#"{"grid": 8, "T": 0.02, "dt": 0.005}"#).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest_lists(dir: &Path, names: &[&str]) {
    let text = fs::read_to_string(dir.join("manifest.json")).unwrap();
    let m: serde_json::Value = serde_json::from_str(&text).unwrap();
    let listed: Vec<&str> = m["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| o["name"].as_str().unwrap())
        .collect();
    for n in names {
        assert!(listed.contains(n), "{n} missing from {listed:?}");
    }
    let echo = serde_json::to_string(&m["config"]).unwrap();
    stcns_core::parse_config(&echo).expect("config echo round-trips");
}

#[test]
fn verify_on_defaults_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = stcns(&["verify", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.contains("FAIL"));
    manifest_lists(&dir.path().join("v"), &["verify.json"]);
}

#[test]
fn negative_dt_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"dt": -1}"#).unwrap();
    let out = stcns(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dt"));
}

#[test]
fn bad_a_names_the_interval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"a": 0.7}"#).unwrap();
    let out = stcns(&["twin", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(0, 1/2)"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(stcns(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(stcns(&["converge", "--axis", "q"], dir.path()).status.code(), Some(1));
    assert_eq!(stcns(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn twin_with_zero_delta_reports_zero_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = stcns(&["twin", "--config", &cfg, "--delta", "0", "--every", "1", "--out", "t"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("t/twin.json")).unwrap()).unwrap();
    assert!(report["divergence"].as_array().unwrap().iter().all(|d| d.as_f64() == Some(0.0)));
    assert_eq!(report["bit_identical"], true);
    manifest_lists(&dir.path().join("t"), &["twin.json", "twin.csv"]);
}

#[test]
fn run_resume_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = stcns(&["run", "--config", &cfg, "--out", "a"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    manifest_lists(&dir.path().join("a"), &["diagnostics.csv", "final.stcn", "run.json"]);
    let csv = fs::read_to_string(dir.path().join("a/diagnostics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);

    let again = stcns(&["run", "--config", &cfg, "--out", "b"], dir.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(
        fs::read(dir.path().join("a/diagnostics.csv")).unwrap(),
        fs::read(dir.path().join("b/diagnostics.csv")).unwrap()
    );

    let ex = stcns(&["export", "a/final.stcn", "--out", "e"], dir.path());
    assert_eq!(ex.status.code(), Some(0));
    let samples = fs::read_to_string(dir.path().join("e/final.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 8 * 8 * 8);

    let ex = stcns(&["export", "a/final.stcn", "--format", "json", "--out", "e"], dir.path());
    assert_eq!(ex.status.code(), Some(0));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e/final.json")).unwrap()).unwrap();
    assert_eq!(meta["step"], 4);

    fs::write(dir.path().join("junk.stcn"), b"STCN\x01").unwrap();
    let bad = stcns(&["export", "junk.stcn", "--out", "e"], dir.path());
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("corrupt"));
}

#[test]
fn ensemble_and_converge_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = stcns(&["ensemble", "--config", &cfg, "--paths", "3", "--out", "en"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = fs::read_to_string(dir.path().join("en/ensemble_paths.csv")).unwrap();
    assert_eq!(rows.lines().count(), 4);

    let cfg2 = dir.path().join("conv.json");
    fs::write(&cfg2, r#"{"grid": 8, "T": 0.02, "dt": 0.001}"#).unwrap();
    let out = stcns(
        &["converge", "--config", cfg2.to_str().unwrap(), "--axis", "dt", "--out", "cv"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ex = stcns(&["export", "cv/refinement.json", "--out", "cv"], dir.path());
    assert_eq!(ex.status.code(), Some(0));
    assert_eq!(fs::read_to_string(dir.path().join("cv/refinement.csv")).unwrap().lines().count(), 3);
}

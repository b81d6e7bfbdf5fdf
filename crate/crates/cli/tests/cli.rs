use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pathsig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathsig"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, inputs: &[&str], out: &str) -> String {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({ "inputs": inputs, "out": out, "max_pairs": 200 });
    fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn selfcheck_passes() {
    let o = pathsig(&["selfcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 10);
    assert!(text.lines().all(|l| l.starts_with("PASS ")));
}

#[test]
fn selfcheck_with_corrupted_fixture_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("bad.npy");
    let mut bytes = pathsig::report::REFERENCE_NPY.to_vec();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&fixture, bytes).unwrap();
    let out = dir.path().join("out");
    let o = pathsig(&["selfcheck", "--fixture", fixture.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL npy_reference_fixture"));
    assert!(stderr(&o).contains("npy_reference_fixture"));
    assert!(out.join("selfcheck.json").is_file());
    assert!(out.join("index.json").is_file());
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(pathsig(&["analyze", "--bogus"]).status.code(), Some(1));
    assert_eq!(pathsig(&["analyze"]).status.code(), Some(1));
    assert_eq!(pathsig(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(pathsig(&["selfcheck", "--threshold-mode", "quantile:2"]).status.code(), Some(1));
    assert_eq!(pathsig(&["selfcheck", "--alpha", "-1"]).status.code(), Some(1));
    assert_eq!(pathsig(&["analyze", "--config", "/nonexistent/run.json"]).status.code(), Some(1));
    assert_eq!(pathsig(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["missing/manifest.json"], "out");
    let o = pathsig(&["analyze", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn memorisation_then_analyze_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let mem = dir.path().join("mem");
    let cfg_path = dir.path().join("mem.json");
    fs::write(
        &cfg_path,
        r#"{"out": "mem", "memorisation": {"per_class": 30, "epochs": 5}}"#,
    )
    .unwrap();
    let o = pathsig(&["memorisation", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("true_ood"));
    assert!(mem.join("memorisation.csv").is_file());

    let cfg = write_config(
        dir.path(),
        &["mem/dumps/true/manifest.json", "mem/dumps/true_ood/manifest.json"],
        "report",
    );
    let o = pathsig(&["analyze", "--config", &cfg, "--bins", "10", "--threshold-mode", "row-mean-abs"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = fs::read_to_string(dir.path().join("report/00_true_output/summary.json")).unwrap();
    assert!(summary.contains("\"bins\": 10"));
    assert!(summary.contains("row-mean-abs"));

    let o = pathsig(&["compare", "--config", &cfg, "--out", dir.path().join("cmp").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean ID-OOD KL"));
    assert!(dir.path().join("cmp/compare.json").is_file());

    let o = pathsig(&["analyze", "--config", &cfg, "--layer", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

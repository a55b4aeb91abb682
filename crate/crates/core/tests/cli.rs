//! The `eadr-sim` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eadr-sim")).args(args).output().expect("spawn eadr-sim")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn small_run<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec!["run", "--workload", "array", "--txn", "64", "--cores", "1", "--n-txns", "50", "--out", out];
    args.extend_from_slice(extra);
    args
}

#[test]
fn table3_prints_the_three_energies() {
    let o = sim(&["table3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for needle in ["baseline,47.7343", "sepencr,29.7539", "bbe,54.4297"] {
        assert!(text.contains(needle), "{text}");
    }
}

#[test]
fn recovery_curve_doubles_with_size() {
    let o = sim(&["recovery-curve", "--sizes", "2,4,8,16,32"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("32,0.1048576,0.0524288"), "{text}");
}

#[test]
fn run_writes_results_and_audits() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sim(&small_run(out, &["--scheme", "sepencr", "--model", "write-only", "--crash", "step:40"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(csv.starts_with("# config-sha256 "));
    assert!(csv.contains("scheme,model,workload,txn_size,cores,crash_step"));
    let audits: Vec<_> = std::fs::read_dir(dir.path().join("audits")).unwrap().collect();
    assert_eq!(audits.len(), 1);
}

#[test]
fn identical_configs_give_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = ["--scheme", "bbe,eadr-cme", "--model", "wco", "--crash", "sweep:5"];
    for d in [&a, &b] {
        let o = sim(&small_run(d.path().to_str().unwrap(), &extra));
        assert!(o.status.success());
    }
    let read = |p: &Path| std::fs::read(p.join("results.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn exit_code_tracks_expected_audit_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let crash = ["--model", "write-only", "--crash", "step:60", "--expect-leak"];
    let with = |scheme: &'static str| {
        let mut v = vec!["--scheme", scheme];
        v.extend_from_slice(&crash);
        v
    };
    assert_eq!(sim(&small_run(out, &with("mc-cme"))).status.code(), Some(0));
    assert_eq!(sim(&small_run(out, &with("sepencr"))).status.code(), Some(1));
}

#[test]
fn incompatible_pair_is_an_error_in_run_and_skipped_in_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sim(&small_run(out, &["--scheme", "bbe", "--model", "write-only"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("write-only"));

    let o = sim(&[
        "sweep", "--scheme", "bbe", "--workload", "array", "--txn", "64", "--cores", "1", "--n-txns", "20", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(!csv.contains("bbe,write-only"));
    assert!(csv.contains("bbe,all-operation"));
}

#[test]
fn config_file_drives_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"schemes":["eadr-cme"],"models":["write-only"],"workloads":["queue"],"txn_sizes":[256],"cores":[2],"n_txns":30}"#,
    )
    .unwrap();
    let o = sim(&["run", "--config", cfg.to_str().unwrap(), "--scheme", "sepencr"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("sepencr,write-only,queue,256,2,"), "{text}");
    assert!(!text.contains("eadr-cme"));

    std::fs::write(&cfg, r#"{"schemez":["bbe"]}"#).unwrap();
    assert_eq!(sim(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn audit_rechecks_saved_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sim(&small_run(
        out,
        &["--scheme", "mc-cme", "--model", "write-only", "--crash", "step:60", "--expect-leak", "--save-traces"],
    ));
    assert!(o.status.success());
    let traces = dir.path().join("traces");
    let label = "mc-cme-write-only-array-64B-1c-crash60";
    let path = |kind: &str| traces.join(format!("{label}.{kind}.txt")).to_str().unwrap().to_string();
    let o = sim(&["audit", "--ops", &path("ops"), "--bus", &path("bus"), "--seeds", &path("seeds"), "--first-k", "2"]);
    assert_eq!(o.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(report["confidentiality"]["violations"].as_u64().unwrap() > 0, "{report}");
}

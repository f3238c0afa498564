use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_feedback-lab"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str], out: &Path) -> i32 {
    let st = bin().args(args).arg("--out").arg(out).output().expect("binary runs");
    st.status.code().expect("exit code")
}

fn report(out: &Path, command: &str) -> Value {
    let text = std::fs::read_to_string(out.join(format!("{command}.report.json"))).expect("report written");
    serde_json::from_str(&text).expect("valid json")
}

#[test]
fn goodwin_census_finds_one_of_each() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("goodwin_oscillatory.json");
    assert_eq!(run(&["census", "--config", cfg.to_str().unwrap()], dir.path()), 0);
    let r = report(dir.path(), "census");
    let res = &r["result"];
    let eq = res["equilibria"].as_array().unwrap();
    assert_eq!(eq.len(), 1);
    assert_eq!(eq[0]["morse_index"], 2);
    assert_eq!(eq[0]["hyperbolic"], true);
    let orbits = res["periodic_orbits"].as_array().unwrap();
    assert_eq!(orbits.len(), 1);
    assert_eq!(orbits[0]["classification"]["hyperbolic"], true);
    let conns = res["connections"].as_array().unwrap();
    assert_eq!(conns.len(), 1);
    assert_eq!(conns[0]["verdict"], "predicted_transverse");
    assert_eq!(res["morse_smale_verdict"]["type"], "ConsistentWithMorseSmale");
    for key in ["model_hash", "convention", "seed", "tool_version", "thresholds"] {
        assert!(!r["stamp"][key].is_null(), "stamp lacks {key}");
    }
}

#[test]
fn synthetic_equilibria_have_all_indices() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("synthetic_bistable.json");
    assert_eq!(run(&["equilibria", "--config", cfg.to_str().unwrap()], dir.path()), 0);
    let r = report(dir.path(), "equilibria");
    let mut counts = [0; 4];
    for e in r["result"]["equilibria"].as_array().unwrap() {
        counts[e["morse_index"].as_u64().unwrap() as usize] += 1;
    }
    assert_eq!(counts, [8, 12, 6, 1]);
    assert!(dir.path().join("equilibria.csv").exists());
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = config("synthetic_bistable.json");
    for d in [&a, &b] {
        assert_eq!(run(&["limits", "--config", cfg.to_str().unwrap(), "--seed", "7", "--workers", "3"], d.path()), 0);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("limits.report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn malformed_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema": 1, "model": {"name": "goodwin", "params": {"p": 24}}}"#).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["equilibria", "--config", bad.to_str().unwrap()], &out), 2);
    let err: Value = serde_json::from_str(&std::fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(err["error"]["kind"], "invalid_config");
    assert!(err["error"]["message"].as_str().unwrap().contains("missing field `b`"));

    std::fs::write(&bad, "{not json").unwrap();
    assert_eq!(run(&["equilibria", "--config", bad.to_str().unwrap()], &out), 2);
    let cfg = config("goodwin_oscillatory.json");
    assert_eq!(run(&["equilibria", "--config", cfg.to_str().unwrap(), "--convention", "sideways"], &out), 2);
    assert_eq!(run(&["equilibria"], &out), 2);
}

#[test]
fn verify_subset_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["verify", "--criteria", "2,4,6"], dir.path()), 0);
    let r = report(dir.path(), "verify");
    assert_eq!(r["result"]["passed"], true);
    assert_eq!(r["result"]["criteria"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("meta.json").exists());
}

#[test]
fn edge_backward_positive_fails_the_arbiter() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["verify", "--criteria", "2", "--convention", "edge_backward_positive"], dir.path()), 3);
    let err: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("error.json")).unwrap()).unwrap();
    assert_eq!(err["error"]["kind"], "verify_failure");
}

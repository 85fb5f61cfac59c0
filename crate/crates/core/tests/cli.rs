//! Black-box runs of the binary: output text, JSON envelope and exit codes.

use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shardcalc"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn with_config(name: &str, args: &[&str]) -> Output {
    let path = config(name);
    let mut all = vec!["--config", path.to_str().unwrap()];
    all.extend_from_slice(args);
    run(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", stdout(o)))
}

fn bytes(v: &Value) -> i128 {
    v.as_str().expect("bytes are strings").parse().unwrap()
}

#[test]
fn derive_dp_table() {
    let o = with_config("dp_70b_8.json", &["derive"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("1120 GB"), "{out}");
    assert!(out.contains("245 GB"), "{out}");
}

#[test]
fn derive_zero3_table_and_json() {
    let o = with_config("zero3_70b_8.json", &["derive"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("140 GB") && out.contains("368 GB"), "{out}");

    let j = json(&with_config("zero3_70b_8.json", &["--json", "derive"]));
    assert_eq!(bytes(&j["result"]["memory"]["model_state_bytes"]), 140_000_000_000);
    assert_eq!(bytes(&j["result"]["comm"]["total_bytes_per_device_per_step"]), 367_500_000_000);
}

#[test]
fn binary_units_only_change_display() {
    let o = with_config("dp_70b_8.json", &["--binary-units", "derive"]);
    let out = stdout(&o);
    assert!(out.contains("GiB") && !out.contains(" GB"), "{out}");
    let j = json(&with_config("dp_70b_8.json", &["--binary-units", "--json", "derive"]));
    assert_eq!(bytes(&j["result"]["memory"]["model_state_bytes"]), 1_120_000_000_000);
}

#[test]
fn malformed_token_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("dp_70b_8.json"))
        .unwrap()
        .replace(r#""theta": "R""#, r#""theta": "Q""#);
    let path = dir.path().join("bad.json");
    std::fs::write(&path, text).unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "derive"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("placement.theta"), "{}", stderr(&o));

    let j = json(&run(&["--config", path.to_str().unwrap(), "--json", "derive"]));
    assert_eq!(j["status"], "input_error");
}

#[test]
fn syntax_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"model\": {\"params\": 1e9,, }\n}").unwrap();
    let o = run(&["--config", path.to_str().unwrap(), "derive"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2() {
    assert_eq!(run(&["derive"]).status.code(), Some(2));
    assert_eq!(run(&["--config", "/nonexistent.json", "plan"]).status.code(), Some(2));
}

#[test]
fn validate_paper_passes() {
    let o = run(&["validate-paper"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.matches("PASS").count(), 6, "{out}");
    let j = json(&run(&["--json", "validate-paper"]));
    assert_eq!(j["result"]["passed"], true);
}

#[test]
fn validate_paper_one_device_reports_zero_traffic() {
    let j = json(&run(&["--json", "validate-paper", "--devices", "1"]));
    assert_eq!(j["result"]["passed"], true);
    let checks = j["result"]["checks"].as_array().unwrap();
    for c in checks.iter().filter(|c| c["name"].as_str().unwrap().contains("communication")) {
        assert!(c["got"].as_str().unwrap().contains("0 GB") || c["got"] == "0 B and 0 B", "{c}");
    }
}

#[test]
fn simulate_dp_passes() {
    let o = with_config("dp_small_4.json", &["--json", "simulate", "--steps", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let j = json(&o);
    assert!(j["result"]["check"]["grad_rel_err"].as_f64().unwrap() < 1e-5);
    assert_eq!(j["result"]["check"]["passed"], true);
    assert_eq!(j["manifest"]["options"]["simulation"]["steps"], 100);
}

#[test]
fn simulate_wrong_normalization_exits_3() {
    let o = with_config("dp_small_4.json", &["simulate", "--inject", "wrong-normalization"]);
    assert_eq!(o.status.code(), Some(3));
    let out = stdout(&o);
    assert!(out.contains("step 1 gradient equivalence") && out.contains("FAIL"), "{out}");
    let line = out.lines().find(|l| l.contains("step 1")).unwrap();
    assert!(line.ends_with("FAIL"), "{line}");
}

#[test]
fn simulate_offload_is_refused() {
    let o = with_config("offload_70b_8.json", &["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("analytical-only mode"), "{}", stderr(&o));
}

#[test]
fn simulate_seed_flag_changes_the_run() {
    let a = json(&with_config("dp_small_4.json", &["--json", "--seed", "1", "simulate", "--steps", "3"]));
    let b = json(&with_config("dp_small_4.json", &["--json", "--seed", "2", "simulate", "--steps", "3"]));
    assert_ne!(a["result"]["check"]["final_loss"], b["result"]["check"]["final_loss"]);
}

#[test]
fn unknown_fault_is_an_input_error() {
    let o = with_config("dp_small_4.json", &["simulate", "--inject", "cosmic-ray"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn plan_thresholds_from_flags() {
    let j = json(&with_config("plan_70b_128.json", &["--json", "plan"]));
    assert_eq!(j["result"]["branch"], "zero3");
    assert_eq!(j["result"]["feasible"], true);
    // 8.75 GB per device fails a 10 % budget of 80 GB
    let j = json(&with_config(
        "plan_70b_128.json",
        &["--json", "plan", "--model-state-threshold", "0.1"],
    ));
    assert_eq!(j["result"]["feasible"], false);
    assert_eq!(j["manifest"]["options"]["planner"]["model_state_threshold"], 0.1);
    let bad = with_config("plan_70b_128.json", &["plan", "--layer-threshold", "1.5"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn compose_groups_and_flags() {
    let o = with_config("tp4_dp2_70b.json", &["compose"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("{0,1,2,3} {4,5,6,7}"), "{out}");
    assert!(out.contains("{0,4} {1,5} {2,6} {3,7}"), "{out}");

    let j = json(&with_config("dp_70b_8.json", &["--json", "compose", "--tp", "2"]));
    assert_eq!(j["result"]["composition"]["dp"], 4);
    let bad = with_config("dp_70b_8.json", &["compose", "--tp", "3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn every_command_shares_the_envelope() {
    let outputs = [
        run(&["--json", "catalog"]),
        run(&["--json", "validate-paper"]),
        with_config("dp_70b_8.json", &["--json", "derive"]),
        with_config("plan_70b_128.json", &["--json", "plan"]),
        with_config("tp4_dp2_70b.json", &["--json", "compose"]),
        with_config("dp_small_4.json", &["--json", "simulate", "--steps", "2"]),
        run(&["--json", "derive"]),
    ];
    for o in &outputs {
        let j = json(o);
        let keys: Vec<&str> = j.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys, ["manifest", "result", "status"]);
        for field in ["command", "config_path", "options", "tool_version", "timestamp_unix_s"] {
            assert!(j["manifest"].get(field).is_some(), "{field} missing in {j}");
        }
    }
}

#[test]
fn catalog_has_seven_rows() {
    let j = json(&run(&["--json", "catalog"]));
    let rows = j["result"].as_array().unwrap();
    assert_eq!(rows.len(), 7);
    assert_eq!(rows[3]["tuple"], "(S*, S, S, R)");
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn genstudent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genstudent"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn missing_file_exits_with_3() {
    let o = genstudent(&[
        "run",
        "--cohort",
        "/nonexistent/cohort.json",
        "--out",
        "/nonexistent/run",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error: "));
}

#[test]
fn malformed_bank_exits_with_1_and_names_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let bank = path(dir.path(), "bank.json");
    fs::write(&bank, "{\n  \"universe\": [\n").unwrap();
    let o = genstudent(&["cohort", "--bank", &bank]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn unreachable_llm_endpoint_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = path(dir.path(), "cohort.json");
    assert!(genstudent(&["cohort", "--out", &cohort]).status.success());
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let endpoint = format!("http://127.0.0.1:{port}/v1");
    let o = genstudent(&[
        "run",
        "--cohort",
        &cohort,
        "--backend",
        "llm",
        "--endpoint",
        &endpoint,
        "--max-retries",
        "0",
        "--out",
        &path(dir.path(), "run"),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sim_run_then_analyze_prints_markdown() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = path(dir.path(), "cohort.json");
    let run = path(dir.path(), "run");
    assert!(genstudent(&["cohort", "--seed", "3", "--out", &cohort])
        .status
        .success());
    assert!(genstudent(&["run", "--cohort", &cohort, "--seed", "3", "--out", &run])
        .status
        .success());
    let o = genstudent(&["analyze", "--run", &run, "--name", "sim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = stdout(&o);
    assert!(md.contains("## Cohort `sim`"));
    assert!(md.contains("- Students: 45"));
    assert!(md.contains("Accuracy by condition"));
}

#[test]
fn compare_fixtures_reports_published_overlaps() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "cmp");
    let o = genstudent(&["compare", "--fixture", "real", "--fixture", "generative", "--out", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("cmp/report.json")).unwrap()).unwrap();
    let cmp = &report["comparisons"][0];
    assert_eq!(cmp["pearson_r"], 0.7181);
    assert_eq!(cmp["easy_overlap"].as_array().unwrap().len(), 2);
    assert_eq!(cmp["hard_overlap"].as_array().unwrap().len(), 3);
}

#[test]
fn unknown_fixture_is_a_validation_error() {
    let o = genstudent(&["compare", "--fixture", "imaginary"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("imaginary"));
}

#[test]
fn experiment_on_bundled_aggregates() {
    let o = genstudent(&["experiment"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let md = stdout(&o);
    assert!(md.contains("0.2475"), "{md}");
}

#[test]
fn experiment_json_has_per_question_diffs() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "exp");
    assert!(genstudent(&["experiment", "--out", &out]).status.success());
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("exp/experiment.json")).unwrap()).unwrap();
    let diffs: Vec<f64> = report["form_effect"]["questions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| q["diff"].as_f64().unwrap())
        .collect();
    assert_eq!(diffs, vec![-0.03, 0.18, 0.51, 0.33]);
}

#[test]
fn calibrate_applies_overrides() {
    let o = genstudent(&["calibrate", "--set", "confused/yes/no=0.2,0.9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let toml = stdout(&o);
    assert!(toml.contains("p_correct = 0.2"), "{toml}");
    assert!(toml.contains("p_pick_confused_when_wrong = 0.9"));
}

#[test]
fn calibrate_rejects_bad_probability() {
    let o = genstudent(&["calibrate", "--set", "mastered/no/no=1.5"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

mod support;

use std::fs;
use std::path::Path;

use genstudent_core::backend::{BackendConfig, BackendKind, CalibrationTable, LogRecord};
use genstudent_core::fixtures::demo_bank;
use genstudent_core::io::{
    load_cohort, load_run, read_log, read_score_matrix, run_pipeline, save_json, write_log, PipelineError,
    PipelineInputs, RunOutput, MANIFEST_FILE, RESPONSES_FILE,
};
use genstudent_core::knowledge::{generate_cohort, CohortSpec, GeneratedCohort};
use genstudent_core::prompt::PromptTemplate;
use proptest::prelude::*;
use support::mock_llm::{completion, MockServer};

fn standard_cohort(seed: u64) -> GeneratedCohort {
    let bank = demo_bank();
    generate_cohort(
        &CohortSpec::standard(),
        &bank.universe,
        &bank.confusion_candidates,
        seed,
    )
    .unwrap()
}

fn run(cohort: &GeneratedCohort, config: &BackendConfig, out: &Path) -> Result<RunOutput, PipelineError> {
    let bank = demo_bank();
    run_pipeline(
        &PipelineInputs {
            bank: &bank,
            cohort,
            cohort_seed: Some(1),
            config,
            calibration: &CalibrationTable::default(),
            template: &PromptTemplate::default(),
        },
        out,
    )
}

#[test]
fn simulator_run_produces_900_responses() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = standard_cohort(1);
    let out = run(&cohort, &BackendConfig::default(), dir.path()).unwrap();
    assert_eq!(out.records.len(), 900);
    assert_eq!((out.manifest.n_answered, out.manifest.n_failed), (900, 0));
    assert_eq!(out.manifest.seeds.cohort, Some(1));

    let loaded = load_run(dir.path()).unwrap();
    assert_eq!(loaded.records, out.records);
    assert_eq!(loaded.cohort, cohort);
    assert_eq!(loaded.manifest, out.manifest);
    assert_eq!(read_score_matrix(&dir.path().join("scores.csv")).unwrap(), out.matrix);
}

#[test]
fn same_seed_same_responses() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cohort = standard_cohort(2);
    let mut config = BackendConfig {
        seed: 9,
        ..BackendConfig::default()
    };
    let x = run(&cohort, &config, a.path()).unwrap();
    config.parallel = 1;
    let y = run(&cohort, &config, b.path()).unwrap();
    assert_eq!(x.records, y.records);
    assert_eq!(
        fs::read(a.path().join(RESPONSES_FILE)).unwrap(),
        fs::read(b.path().join(RESPONSES_FILE)).unwrap()
    );
}

#[test]
fn empty_cohort_writes_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let empty = GeneratedCohort {
        profiles: vec![],
        pairings: vec![],
    };
    let out = run(&empty, &BackendConfig::default(), dir.path()).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(fs::read_to_string(dir.path().join(RESPONSES_FILE)).unwrap(), "");
}

#[test]
fn tampered_log_is_detected() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = standard_cohort(3);
    let config = BackendConfig {
        kind: BackendKind::Random,
        ..BackendConfig::default()
    };
    let out = run(&cohort, &config, dir.path()).unwrap();
    write_log(&dir.path().join(RESPONSES_FILE), &out.records[1..]).unwrap();
    assert!(load_run(dir.path()).unwrap_err().is_validation());
}

#[test]
fn api_key_never_reaches_disk() {
    let secret = "sk-live-DO-NOT-PERSIST-4242";
    std::env::set_var("GENSTUDENT_PIPELINE_TEST_KEY", secret);
    let server = MockServer::start(|i, _| (200, completion(["ANSWER: A", "ANSWER: B\nRATIONALE: r"][i % 2])));
    let dir = tempfile::tempdir().unwrap();
    let mut cohort = standard_cohort(4);
    cohort.profiles.truncate(3);
    let config = BackendConfig {
        kind: BackendKind::Llm,
        endpoint: server.url().to_string(),
        api_key_env: "GENSTUDENT_PIPELINE_TEST_KEY".into(),
        ..BackendConfig::default()
    };
    let out = run(&cohort, &config, dir.path()).unwrap();
    assert_eq!(out.manifest.n_answered, 60);
    assert!(server
        .requests()
        .iter()
        .all(|r| r.header("authorization") == Some(&format!("Bearer {secret}"))));
    for entry in fs::read_dir(dir.path()).unwrap() {
        let text = fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains(secret));
    }
    let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(manifest.contains("GENSTUDENT_PIPELINE_TEST_KEY"));
}

#[test]
fn llm_run_requires_exemplars_for_every_profile() {
    let dir = tempfile::tempdir().unwrap();
    let mut bank = demo_bank();
    bank.exemplars.as_mut().unwrap().mastery.clear();
    let config = BackendConfig {
        kind: BackendKind::Llm,
        endpoint: "http://127.0.0.1:9/v1".into(),
        ..BackendConfig::default()
    };
    let err = run_pipeline(
        &PipelineInputs {
            bank: &bank,
            cohort: &standard_cohort(5),
            cohort_seed: None,
            config: &config,
            calibration: &CalibrationTable::default(),
            template: &PromptTemplate::default(),
        },
        dir.path(),
    )
    .unwrap_err();
    assert!(matches!(err, PipelineError::Validation(_)), "{err}");
}

#[test]
fn cohort_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cohort.json");
    let cohort = standard_cohort(6);
    save_json(&path, &cohort).unwrap();
    assert_eq!(load_cohort(&path, &demo_bank().universe).unwrap(), cohort);
    // A bare list of profiles is accepted too.
    save_json(&path, &cohort.profiles).unwrap();
    assert_eq!(
        load_cohort(&path, &demo_bank().universe).unwrap().profiles,
        cohort.profiles
    );
}

#[test]
fn invalid_profile_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cohort.json");
    let mut cohort = standard_cohort(7);
    let stray = cohort.profiles[0].confusions[0].kc_a().clone();
    cohort.profiles[0].mastered.insert(stray);
    save_json(&path, &cohort).unwrap();
    let err = load_cohort(&path, &demo_bank().universe).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains(&cohort.profiles[0].id));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn response_log_round_trip(seed in 0u64..1000, p in 0.0f64..=1.0) {
        let dir = tempfile::tempdir().unwrap();
        let mut cohort = standard_cohort(seed);
        cohort.profiles.truncate(4);
        let config = BackendConfig { kind: BackendKind::Random, p_correct: p, seed, ..BackendConfig::default() };
        let out = run(&cohort, &config, dir.path()).unwrap();
        let path = dir.path().join("copy.jsonl");
        write_log(&path, &out.records).unwrap();
        let back: Vec<LogRecord> = read_log(&path).unwrap();
        prop_assert_eq!(back, out.records);
    }
}

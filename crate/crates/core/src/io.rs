//! File formats and the end-to-end run pipeline.
//!
//! Question banks, cohorts and manifests are JSON documents, response logs
//! are JSON lines, and score matrices are CSV with one row per student.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    collect_responses, BackendConfig, BackendError, BackendKind, CalibrationTable, LlmBackend, LlmClient, LogRecord,
    RandomBackend, ResponseBackend, SimulatorBackend,
};
use crate::knowledge::{
    validate_profile, CohortSpec, ConfusionPair, GeneratedCohort, KcUniverse, Question, StudentProfile,
};
use crate::prompt::{ExemplarBank, PromptTemplate};
use crate::psychometrics::ResponseMatrix;

pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const SCORES_FILE: &str = "scores.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROFILES_FILE: &str = "profiles.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}\n    {context}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
        context: String,
    },
    #[error("{origin}: {message}")]
    Validation { origin: String, message: String },
}

impl IoError {
    /// Whether the input was readable but malformed or invalid.
    pub fn is_validation(&self) -> bool {
        matches!(self, Self::Parse { .. } | Self::Validation { .. })
    }

    fn validation(origin: impl Display, message: impl Display) -> Self {
        Self::Validation {
            origin: origin.to_string(),
            message: message.to_string(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    }
}

fn line_context(text: &str, line: usize) -> String {
    let mut s: String = text
        .lines()
        .nth(line.saturating_sub(1))
        .unwrap_or("")
        .trim()
        .to_string();
    if s.len() > 120 {
        let cut = (0..=117).rev().find(|&i| s.is_char_boundary(i)).unwrap_or(0);
        s.truncate(cut);
        s.push_str("...");
    }
    s
}

/// Parse JSON, reporting failures with line, column and the offending line.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, IoError> {
    serde_json::from_str(text).map_err(|e| IoError::Parse {
        origin: origin.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
        context: line_context(text, e.line()),
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    parse_json(&read_text(path)?, &path.display().to_string())
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(write_err(path))
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn json_hash<T: Serialize + ?Sized>(value: &T) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("serializable value")))
}

/// KC universe, quiz questions and the expert input needed to simulate a
/// cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionBankFile {
    pub universe: KcUniverse,
    pub questions: Vec<Question>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<ExemplarBank>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub confusion_candidates: Vec<ConfusionPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<CohortSpec>,
}

impl QuestionBankFile {
    pub fn validate(&self) -> Result<(), String> {
        let mut ids = BTreeSet::new();
        for q in &self.questions {
            if !ids.insert(q.id.as_str()) {
                return Err(format!("duplicate question id {}", q.id));
            }
            q.validate(&self.universe).map_err(|e| e.to_string())?;
        }
        if let Some(bank) = &self.exemplars {
            bank.validate(&self.universe).map_err(|e| e.to_string())?;
        }
        for pair in &self.confusion_candidates {
            for kc in pair.members() {
                if !self.universe.contains(kc) {
                    return Err(format!(
                        "confusion candidate {pair} uses {kc}, which is not in the KC universe"
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.questions.iter().find(|q| q.id == id)
    }

    pub fn question_ids(&self) -> Vec<String> {
        self.questions.iter().map(|q| q.id.clone()).collect()
    }
}

pub fn parse_question_bank(text: &str, origin: &str) -> Result<QuestionBankFile, IoError> {
    let bank: QuestionBankFile = parse_json(text, origin)?;
    bank.validate().map_err(|m| IoError::validation(origin, m))?;
    Ok(bank)
}

pub fn load_question_bank(path: &Path) -> Result<QuestionBankFile, IoError> {
    parse_question_bank(&read_text(path)?, &path.display().to_string())
}

/// Check ids are unique and every profile partitions `universe`.
pub fn validate_profiles(profiles: &[StudentProfile], universe: &KcUniverse) -> Result<(), String> {
    let mut ids = BTreeSet::new();
    for p in profiles {
        if !ids.insert(p.id.as_str()) {
            return Err(format!("duplicate profile id {}", p.id));
        }
        validate_profile(p, universe).map_err(|e| e.to_string())?;
    }
    Ok(())
}

/// Load a cohort file: a generated cohort document or a bare profile list.
pub fn load_cohort(path: &Path, universe: &KcUniverse) -> Result<GeneratedCohort, IoError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum CohortFile {
        Generated(GeneratedCohort),
        Profiles(Vec<StudentProfile>),
    }
    let origin = path.display().to_string();
    let cohort = match load_json::<CohortFile>(path)? {
        CohortFile::Generated(c) => c,
        CohortFile::Profiles(profiles) => GeneratedCohort {
            profiles,
            pairings: Vec::new(),
        },
    };
    validate_profiles(&cohort.profiles, universe).map_err(|m| IoError::validation(&origin, m))?;
    Ok(cohort)
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), IoError> {
    let file = fs::File::create(path).map_err(write_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).expect("serializable record");
        w.write_all(b"\n").map_err(write_err(path))?;
    }
    w.flush().map_err(write_err(path))
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, IoError> {
    let file = fs::File::open(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let origin = path.display().to_string();
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| IoError::Parse {
            origin: origin.clone(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
            context: line_context(&line, 1),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// `student_id,Q1,Q2,...` with `1`, `0`, or an empty cell for masked.
pub fn write_score_matrix(path: &Path, m: &ResponseMatrix) -> Result<(), IoError> {
    let csv_err = |e: csv::Error| IoError::Write {
        path: path.to_path_buf(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["student_id".to_string()];
    header.extend(m.questions().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (s, id) in m.students().iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..m.n_questions()).map(|q| match m.get(s, q) {
            Some(true) => "1".to_string(),
            Some(false) => "0".to_string(),
            None => String::new(),
        }));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(write_err(path))
}

pub fn read_score_matrix(path: &Path) -> Result<ResponseMatrix, IoError> {
    let origin = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| IoError::Read {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    let header = r
        .headers()
        .map_err(|e| IoError::validation(&origin, e))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    let Some((_, questions)) = header.split_first() else {
        return Err(IoError::validation(&origin, "empty header"));
    };
    let mut students = Vec::new();
    let mut cells = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| IoError::validation(&origin, e))?;
        let line = i + 2;
        let mut fields = rec.iter();
        students.push(fields.next().unwrap_or_default().to_string());
        for (q, f) in fields.enumerate() {
            let v = match f.trim() {
                "1" => Some(true),
                "0" => Some(false),
                "" => None,
                other => {
                    return Err(IoError::validation(
                        &origin,
                        format!("line {line}, {}: score {other:?} is not 0, 1 or empty", questions[q]),
                    ))
                }
            };
            cells.push(v);
        }
    }
    let mut m = ResponseMatrix::new(students, questions.to_vec()).map_err(|e| IoError::validation(&origin, e))?;
    for (i, v) in cells.into_iter().enumerate() {
        m.set(i / questions.len(), i % questions.len(), v);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub backend: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<u64>,
}

/// Provenance record written next to every response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub tool_version: String,
    pub backend_id: String,
    /// Contains only the name of the API key variable.
    pub backend: BackendConfig,
    pub bank_sha256: String,
    pub cohort_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_sha256: Option<String>,
    pub seeds: RunSeeds,
    pub n_profiles: usize,
    pub n_questions: usize,
    pub n_answered: usize,
    pub n_failed: usize,
    /// Failed calls by category.
    pub failures: BTreeMap<String, usize>,
    pub responses_file: String,
    pub responses_sha256: String,
    pub scores_file: String,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid input: {0}")]
    Validation(String),
}

/// Construct the backend selected by `config.kind`.
pub fn build_backend(
    config: &BackendConfig,
    bank: &QuestionBankFile,
    calibration: &CalibrationTable,
    template: &PromptTemplate,
) -> Result<Box<dyn ResponseBackend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Sim => Box::new(SimulatorBackend::new(calibration.clone(), config.seed)),
        BackendKind::Random => Box::new(RandomBackend::new(config.p_correct, config.seed)?),
        BackendKind::Llm => {
            let exemplars = bank
                .exemplars
                .clone()
                .ok_or_else(|| BackendError::Config("the llm backend needs an exemplar bank".into()))?;
            Box::new(LlmBackend::new(
                LlmClient::new(config)?,
                bank.universe.clone(),
                exemplars,
                template.clone(),
            ))
        }
    })
}

pub struct PipelineInputs<'a> {
    pub bank: &'a QuestionBankFile,
    pub cohort: &'a GeneratedCohort,
    pub cohort_seed: Option<u64>,
    pub config: &'a BackendConfig,
    pub calibration: &'a CalibrationTable,
    pub template: &'a PromptTemplate,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub records: Vec<LogRecord>,
    pub matrix: ResponseMatrix,
}

/// Answer every question for every profile and persist the run to `out_dir`.
pub fn run_pipeline(inputs: &PipelineInputs<'_>, out_dir: &Path) -> Result<RunOutput, PipelineError> {
    let PipelineInputs {
        bank, cohort, config, ..
    } = *inputs;
    bank.validate().map_err(PipelineError::Validation)?;
    validate_profiles(&cohort.profiles, &bank.universe).map_err(PipelineError::Validation)?;
    if config.kind == BackendKind::Llm {
        let exemplars = bank
            .exemplars
            .as_ref()
            .ok_or_else(|| PipelineError::Validation("the llm backend needs an exemplar bank".into()))?;
        for p in &cohort.profiles {
            exemplars
                .covers(p)
                .map_err(|e| PipelineError::Validation(format!("profile {}: {e}", p.id)))?;
        }
    }
    let backend = build_backend(config, bank, inputs.calibration, inputs.template)?;
    if cohort.profiles.is_empty() {
        log::warn!("empty cohort: writing an empty response log");
    }

    let records = collect_responses(backend.as_ref(), &cohort.profiles, &bank.questions, config.parallel);
    let matrix = ResponseMatrix::from_log(
        &records,
        cohort.profiles.iter().map(|p| p.id.clone()).collect(),
        bank.question_ids(),
    )
    .map_err(|e| PipelineError::Validation(e.to_string()))?;

    fs::create_dir_all(out_dir).map_err(write_err(out_dir))?;
    let log_path = out_dir.join(RESPONSES_FILE);
    write_log(&log_path, &records)?;
    write_score_matrix(&out_dir.join(SCORES_FILE), &matrix)?;
    save_json(&out_dir.join(PROFILES_FILE), cohort)?;
    let log_bytes = fs::read(&log_path).map_err(|source| IoError::Read {
        path: log_path.clone(),
        source,
    })?;

    let mut failures = BTreeMap::new();
    for r in &records {
        if let LogRecord::Failed(f) = r {
            *failures.entry(f.kind.clone()).or_insert(0) += 1;
        }
    }
    let n_failed = failures.values().sum();
    if n_failed > 0 {
        log::warn!("{n_failed} of {} calls failed", records.len());
    }
    let manifest = RunManifest {
        run_id: uuid::Uuid::new_v4().to_string(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        backend_id: backend.id().to_string(),
        backend: config.clone(),
        bank_sha256: json_hash(bank),
        cohort_sha256: json_hash(cohort),
        calibration_sha256: (config.kind == BackendKind::Sim).then(|| json_hash(&inputs.calibration.to_toml())),
        seeds: RunSeeds {
            backend: config.seed,
            cohort: inputs.cohort_seed,
        },
        n_profiles: cohort.profiles.len(),
        n_questions: bank.questions.len(),
        n_answered: records.len() - n_failed,
        n_failed,
        failures,
        responses_file: RESPONSES_FILE.to_string(),
        responses_sha256: hex::encode(Sha256::digest(&log_bytes)),
        scores_file: SCORES_FILE.to_string(),
    };
    save_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(RunOutput {
        manifest,
        records,
        matrix,
    })
}

/// A persisted run read back from its directory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub records: Vec<LogRecord>,
    pub cohort: GeneratedCohort,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun, IoError> {
    let manifest: RunManifest = load_json(&dir.join(MANIFEST_FILE))?;
    let log_path = dir.join(&manifest.responses_file);
    let bytes = fs::read(&log_path).map_err(|source| IoError::Read {
        path: log_path.clone(),
        source,
    })?;
    if hex::encode(Sha256::digest(&bytes)) != manifest.responses_sha256 {
        return Err(IoError::validation(
            log_path.display(),
            "response log does not match the hash recorded in the manifest",
        ));
    }
    Ok(LoadedRun {
        records: read_log(&log_path)?,
        cohort: load_json(&dir.join(PROFILES_FILE))?,
        manifest,
    })
}

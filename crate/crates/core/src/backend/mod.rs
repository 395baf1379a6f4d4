//! Response backends: one `(profile, question)` in, one [`Response`] out.
//!
//! Three implementations share the [`ResponseBackend`] contract: an
//! OpenAI-compatible LLM client, the calibrated probabilistic simulator, and
//! the Bernoulli random baseline. Randomised backends draw from a stream
//! derived from the master seed and both ids (see [`stream_rng`]), so results
//! do not depend on execution order or parallelism.

mod calibration;
mod llm;
mod parse;
mod random;
mod simulator;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::knowledge::{classify_condition, focused_condition, AnswerStatus, ConditionTag, Question, StudentProfile};

pub use calibration::{CalibrationCell, CalibrationError, CalibrationKey, CalibrationTable, DEFAULT_CALIBRATION};
pub use llm::{chat_request_body, LlmBackend, LlmClient, LlmError};
pub use parse::{format_reply, parse_llm_reply, ParseError};
pub use random::{random_answer, RandomBackend};
pub use simulator::{simulate_answer, SimulatorBackend};

/// One student's answer to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub student_id: String,
    pub question_id: String,
    pub chosen_index: usize,
    pub correct: bool,
    #[serde(default)]
    pub rationale: String,
    pub backend_id: String,
    pub condition: ConditionTag,
    /// The correct KC is confused and its pair uses the focused variant.
    #[serde(default)]
    pub focused: bool,
    /// The chosen option is the confused rule for this condition: the
    /// partner KC when the correct KC is confused, otherwise any KC in one
    /// of the profile's confusion pairs.
    #[serde(default)]
    pub picked_confused: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

impl Response {
    pub fn new(
        profile: &StudentProfile,
        question: &Question,
        chosen_index: usize,
        rationale: impl Into<String>,
        backend_id: impl Into<String>,
    ) -> Result<Self, BackendError> {
        if chosen_index >= question.options.len() {
            return Err(BackendError::ChoiceOutOfRange {
                index: chosen_index,
                n_options: question.options.len(),
            });
        }
        let condition = classify_condition(profile, question);
        Ok(Self {
            student_id: profile.id.clone(),
            question_id: question.id.clone(),
            chosen_index,
            correct: chosen_index == question.correct_index,
            rationale: rationale.into(),
            backend_id: backend_id.into(),
            condition,
            focused: focused_condition(profile, question),
            picked_confused: confused_option_indices(profile, question, condition).contains(&chosen_index),
            raw_reply: None,
        })
    }
}

/// Distractor indices that count as "the confused rule" for `condition`.
pub(crate) fn confused_option_indices(
    profile: &StudentProfile,
    question: &Question,
    condition: ConditionTag,
) -> Vec<usize> {
    let correct = question.correct_kc();
    match condition.answer_status {
        AnswerStatus::Confused => {
            let partner = profile
                .pair_containing(correct)
                .and_then(|p| p.partner(correct))
                .expect("confused status implies a pair");
            question.index_of_kc(partner).into_iter().collect()
        }
        _ => question
            .distractors()
            .filter(|(_, o)| profile.is_confused_member(&o.kc))
            .map(|(i, _)| i)
            .collect(),
    }
}

/// A response that could not be obtained. Never carries a fabricated answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedResponse {
    pub student_id: String,
    pub question_id: String,
    pub backend_id: String,
    pub condition: ConditionTag,
    #[serde(default)]
    pub focused: bool,
    /// Short failure category, see [`BackendError::kind`].
    #[serde(default)]
    pub kind: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_reply: Option<String>,
}

/// One line of a response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum LogRecord {
    Answered(Response),
    Failed(FailedResponse),
}

impl LogRecord {
    pub fn student_id(&self) -> &str {
        match self {
            Self::Answered(r) => &r.student_id,
            Self::Failed(f) => &f.student_id,
        }
    }

    pub fn question_id(&self) -> &str {
        match self {
            Self::Answered(r) => &r.question_id,
            Self::Failed(f) => &f.question_id,
        }
    }

    pub fn response(&self) -> Option<&Response> {
        match self {
            Self::Answered(r) => Some(r),
            Self::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Llm,
    Sim,
    Random,
}

impl BackendKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Llm => "llm",
            Self::Sim => "sim",
            Self::Random => "random",
        }
    }
}

/// Backend settings. Holds the *name* of the API key variable, never the key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub retry_backoff_ms: u64,
    pub parallel: usize,
    pub temperature: f64,
    pub seed: u64,
    /// Success probability of the random baseline.
    pub p_correct: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Sim,
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            retry_backoff_ms: 500,
            parallel: 4,
            temperature: 0.0,
            seed: 0,
            p_correct: 0.7,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: String| Err(BackendError::Config(m));
        if self.parallel == 0 {
            return bad("parallel must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.p_correct) {
            return bad(format!("p_correct {} is outside [0, 1]", self.p_correct));
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return bad(format!("timeout {} must be positive", self.timeout_secs));
        }
        if self.kind == BackendKind::Llm && self.endpoint.trim().is_empty() {
            return bad("llm backend needs an endpoint".into());
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

pub trait ResponseBackend: Send + Sync {
    fn id(&self) -> &str;

    fn answer(&self, profile: &StudentProfile, question: &Question) -> Result<Response, BackendError>;
}

/// Deterministic RNG stream for one `(student, question)` cell.
pub fn stream_rng(master_seed: u64, student_id: &str, question_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    for part in [student_id, question_id] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Ask `backend` for every `(profile, question)` cell, `parallel` at a time.
///
/// Output order is profile-major regardless of completion order. Backend
/// errors become [`LogRecord::Failed`] entries.
pub fn collect_responses(
    backend: &dyn ResponseBackend,
    profiles: &[StudentProfile],
    questions: &[Question],
    parallel: usize,
) -> Vec<LogRecord> {
    let jobs: Vec<(usize, usize)> = (0..profiles.len())
        .flat_map(|p| (0..questions.len()).map(move |q| (p, q)))
        .collect();
    let slots: Vec<Mutex<Option<LogRecord>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = parallel.max(1).min(jobs.len().max(1));

    let run = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(p, q)) = jobs.get(i) else { break };
        let (profile, question) = (&profiles[p], &questions[q]);
        let record = match backend.answer(profile, question) {
            Ok(r) => LogRecord::Answered(r),
            Err(e) => {
                log::debug!("{} / {}: {e}", profile.id, question.id);
                LogRecord::Failed(FailedResponse {
                    student_id: profile.id.clone(),
                    question_id: question.id.clone(),
                    backend_id: backend.id().to_string(),
                    condition: classify_condition(profile, question),
                    focused: focused_condition(profile, question),
                    raw_reply: e.raw_reply().map(str::to_string),
                    kind: e.kind().to_string(),
                    error: e.to_string(),
                })
            }
        };
        *slots[i].lock().expect("slot lock") = Some(record);
    };

    if workers <= 1 {
        run();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(run);
            }
        });
    }
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
        .collect()
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("could not parse reply: {error}")]
    Unparseable { error: ParseError, reply: String },
    #[error("chosen index {index} is out of range for {n_options} options")]
    ChoiceOutOfRange { index: usize, n_options: usize },
    #[error(transparent)]
    Prompt(#[from] crate::prompt::PromptError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

impl BackendError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Config(_) => "config",
            Self::Llm(LlmError::Transport(_)) => "transport",
            Self::Llm(LlmError::Status { .. }) => "http_status",
            Self::Llm(LlmError::EmptyCompletion) => "empty_completion",
            Self::Llm(LlmError::Malformed(_)) => "malformed_completion",
            Self::Unparseable { .. } => "unparseable",
            Self::ChoiceOutOfRange { .. } => "choice_out_of_range",
            Self::Prompt(_) => "prompt",
            Self::Calibration(_) => "calibration",
        }
    }

    pub fn raw_reply(&self) -> Option<&str> {
        match self {
            Self::Unparseable { reply, .. } => Some(reply),
            _ => None,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::knowledge::{ConfusionPair, KcId, QuestionOption};
    use rand::Rng;

    pub(crate) fn q(id: &str, tags: &[&str], correct: usize) -> Question {
        Question {
            id: id.into(),
            stem: format!("stem {id}"),
            options: tags
                .iter()
                .map(|t| QuestionOption {
                    text: format!("text {t}"),
                    kc: KcId::from(*t),
                })
                .collect(),
            correct_index: correct,
        }
    }

    pub(crate) fn profile(id: &str, mastered: &[&str], pairs: &[(&str, &str, bool)]) -> StudentProfile {
        StudentProfile::new(
            id,
            mastered.iter().map(|s| KcId::from(*s)),
            pairs
                .iter()
                .map(|(a, b, f)| ConfusionPair::new(*a, *b).unwrap().focused(*f))
                .collect(),
        )
    }

    #[test]
    fn response_correctness_follows_index() {
        let p = profile("s", &["H1"], &[("H3", "H7", false)]);
        let question = q("Q", &["H1", "H3", "H4"], 0);
        let r = Response::new(&p, &question, 0, "", "t").unwrap();
        assert!(r.correct && !r.picked_confused);
        let r = Response::new(&p, &question, 1, "", "t").unwrap();
        assert!(!r.correct && r.picked_confused);
        assert!(Response::new(&p, &question, 3, "", "t").is_err());
    }

    #[test]
    fn picked_confused_uses_partner_for_confused_rows() {
        let p = profile("s", &[], &[("H3", "H7", true), ("H5", "H9", false)]);
        let question = q("Q", &["H3", "H5", "H7", "H1"], 0);
        let wrong_pair = Response::new(&p, &question, 1, "", "t").unwrap();
        assert!(!wrong_pair.picked_confused);
        let partner = Response::new(&p, &question, 2, "", "t").unwrap();
        assert!(partner.picked_confused && partner.focused);
    }

    #[test]
    fn stream_rng_depends_on_all_inputs() {
        let draw = |s, a: &str, b: &str| stream_rng(s, a, b).gen::<u64>();
        assert_eq!(draw(1, "GS1", "Q1"), draw(1, "GS1", "Q1"));
        assert_ne!(draw(1, "GS1", "Q1"), draw(2, "GS1", "Q1"));
        assert_ne!(draw(1, "GS1", "Q1"), draw(1, "GS1", "Q2"));
        // Length prefixes keep ("ab","c") and ("a","bc") apart.
        assert_ne!(draw(1, "ab", "c"), draw(1, "a", "bc"));
    }

    #[test]
    fn log_record_serde_tags() {
        let p = profile("s", &["H1"], &[]);
        let r = Response::new(&p, &q("Q", &["H1", "H2"], 0), 0, "why", "sim").unwrap();
        let line = serde_json::to_string(&LogRecord::Answered(r.clone())).unwrap();
        assert!(line.starts_with(r#"{"status":"answered""#), "{line}");
        assert_eq!(
            serde_json::from_str::<LogRecord>(&line).unwrap(),
            LogRecord::Answered(r)
        );
    }

    #[test]
    fn config_validation() {
        assert!(BackendConfig::default().validate().is_ok());
        let c = BackendConfig {
            parallel: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = BackendConfig {
            p_correct: 1.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    struct Flaky;

    impl ResponseBackend for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }

        fn answer(&self, profile: &StudentProfile, question: &Question) -> Result<Response, BackendError> {
            if question.id == "Q2" {
                return Err(BackendError::Unparseable {
                    error: ParseError::Unparseable,
                    reply: "no idea".into(),
                });
            }
            Response::new(profile, question, 0, "", "flaky")
        }
    }

    #[test]
    fn collect_orders_and_records_failures() {
        let profiles: Vec<_> = (0..5).map(|i| profile(&format!("S{i}"), &[], &[])).collect();
        let questions = vec![
            q("Q1", &["H1", "H2"], 0),
            q("Q2", &["H1", "H2"], 1),
            q("Q3", &["H2", "H1"], 0),
        ];
        let serial = collect_responses(&Flaky, &profiles, &questions, 1);
        let parallel = collect_responses(&Flaky, &profiles, &questions, 4);
        assert_eq!(serial, parallel);
        assert_eq!(serial.len(), 15);
        assert_eq!(serial[4].student_id(), "S1");
        assert_eq!(serial[4].question_id(), "Q2");
        match &serial[4] {
            LogRecord::Failed(f) => assert_eq!(f.raw_reply.as_deref(), Some("no idea")),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}

//! Classical item analysis over binary score matrices.
//!
//! Item means (difficulty), Pearson correlation between cohorts, Cronbach's
//! alpha, easy/hard classification, distractor analysis and per-condition
//! accuracy. Failed responses are masked cells: they drop out of means and
//! distractor frequencies, and alpha runs on complete rows only.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{CalibrationKey, LogRecord, Response};
use crate::knowledge::{option_letter, Question};

pub const EASY_THRESHOLD: f64 = 0.8;
pub const HARD_THRESHOLD: f64 = 0.4;
pub const DISTRACTOR_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsychometricsError {
    #[error("question {0} has no unmasked responses")]
    FullyMasked(String),
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("matrix has {0} masked cell(s); resolve them before computing alpha")]
    MaskedCells(usize),
    #[error("total scores have zero variance")]
    ZeroTotalVariance,
    #[error("cohorts cover different question sets: {0}")]
    QuestionSetMismatch(String),
    #[error("score matrix: {0}")]
    Shape(String),
}

/// Students × questions binary scores with a mask for missing responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    students: Vec<String>,
    questions: Vec<String>,
    /// Row-major; `None` is a masked (missing or failed) cell.
    cells: Vec<Option<bool>>,
}

impl ResponseMatrix {
    /// An all-masked matrix.
    pub fn new(students: Vec<String>, questions: Vec<String>) -> Result<Self, PsychometricsError> {
        for (what, ids) in [("student", &students), ("question", &questions)] {
            let mut seen = BTreeSet::new();
            if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
                return Err(PsychometricsError::Shape(format!("duplicate {what} id {dup}")));
            }
        }
        let cells = vec![None; students.len() * questions.len()];
        Ok(Self {
            students,
            questions,
            cells,
        })
    }

    /// A complete matrix from 0/1 rows.
    pub fn from_rows(
        students: Vec<String>,
        questions: Vec<String>,
        rows: &[Vec<u8>],
    ) -> Result<Self, PsychometricsError> {
        let mut m = Self::new(students, questions)?;
        if rows.len() != m.students.len() {
            return Err(PsychometricsError::Shape(format!(
                "{} rows for {} students",
                rows.len(),
                m.students.len()
            )));
        }
        for (s, row) in rows.iter().enumerate() {
            if row.len() != m.questions.len() {
                return Err(PsychometricsError::Shape(format!(
                    "row {s} has {} scores for {} questions",
                    row.len(),
                    m.questions.len()
                )));
            }
            for (q, &v) in row.iter().enumerate() {
                if v > 1 {
                    return Err(PsychometricsError::Shape(format!("score {v} is not binary")));
                }
                m.set(s, q, Some(v == 1));
            }
        }
        Ok(m)
    }

    /// Unlabelled complete matrix, ids `S1..`, `Q1..`.
    pub fn from_scores(rows: &[Vec<u8>]) -> Result<Self, PsychometricsError> {
        let n_q = rows.first().map_or(0, Vec::len);
        let students = (1..=rows.len()).map(|i| format!("S{i}")).collect();
        let questions = (1..=n_q).map(|i| format!("Q{i}")).collect();
        Self::from_rows(students, questions, rows)
    }

    /// Build from a response log. Failed records stay masked.
    pub fn from_log(
        records: &[LogRecord],
        students: Vec<String>,
        questions: Vec<String>,
    ) -> Result<Self, PsychometricsError> {
        let mut m = Self::new(students, questions)?;
        let s_index: HashMap<&str, usize> = m.students.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let q_index: HashMap<&str, usize> = m.questions.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
        let mut updates = Vec::new();
        let mut seen = BTreeSet::new();
        for rec in records {
            let (Some(&s), Some(&q)) = (s_index.get(rec.student_id()), q_index.get(rec.question_id())) else {
                return Err(PsychometricsError::Shape(format!(
                    "record for ({}, {}) is outside the matrix",
                    rec.student_id(),
                    rec.question_id()
                )));
            };
            if !seen.insert((s, q)) {
                return Err(PsychometricsError::Shape(format!(
                    "duplicate record for ({}, {})",
                    rec.student_id(),
                    rec.question_id()
                )));
            }
            if let Some(r) = rec.response() {
                updates.push((s, q, r.correct));
            }
        }
        for (s, q, v) in updates {
            m.set(s, q, Some(v));
        }
        Ok(m)
    }

    pub fn students(&self) -> &[String] {
        &self.students
    }

    pub fn questions(&self) -> &[String] {
        &self.questions
    }

    pub fn n_students(&self) -> usize {
        self.students.len()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn get(&self, student: usize, question: usize) -> Option<bool> {
        self.cells[student * self.questions.len() + question]
    }

    pub fn set(&mut self, student: usize, question: usize, value: Option<bool>) {
        let n_q = self.questions.len();
        self.cells[student * n_q + question] = value;
    }

    pub fn masked_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_none()).count()
    }

    /// Copy keeping only students with no masked cell, plus the dropped ids.
    pub fn complete_rows(&self) -> (ResponseMatrix, Vec<String>) {
        let n_q = self.questions.len();
        let mut students = Vec::new();
        let mut cells = Vec::new();
        let mut dropped = Vec::new();
        for (s, id) in self.students.iter().enumerate() {
            let row = &self.cells[s * n_q..(s + 1) * n_q];
            if row.iter().all(Option::is_some) {
                students.push(id.clone());
                cells.extend_from_slice(row);
            } else {
                dropped.push(id.clone());
            }
        }
        (
            ResponseMatrix {
                students,
                questions: self.questions.clone(),
                cells,
            },
            dropped,
        )
    }

    fn column(&self, q: usize) -> impl Iterator<Item = Option<bool>> + '_ {
        (0..self.students.len()).map(move |s| self.get(s, q))
    }
}

/// Per-question mean over unmasked entries.
pub fn item_means(m: &ResponseMatrix) -> Result<Vec<f64>, PsychometricsError> {
    (0..m.n_questions())
        .map(|q| {
            let (n, ones) = m
                .column(q)
                .flatten()
                .fold((0usize, 0usize), |(n, ones), v| (n + 1, ones + v as usize));
            if n == 0 {
                Err(PsychometricsError::FullyMasked(m.questions[q].clone()))
            } else {
                Ok(ones as f64 / n as f64)
            }
        })
        .collect()
}

/// Product-moment correlation, clamped to `[-1, 1]`.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, PsychometricsError> {
    if x.len() != y.len() {
        return Err(PsychometricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(PsychometricsError::TooFew {
            what: "paired values",
            needed: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(PsychometricsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

impl VarianceConvention {
    fn divisor(self, n: usize) -> f64 {
        match self {
            Self::Population => n as f64,
            Self::Sample => n.saturating_sub(1) as f64,
        }
    }
}

/// Integer sums for a complete matrix: per-item `n*s - s^2` and the same
/// quantity for total scores. Both are n^2 times the population variance.
fn variance_numerators(m: &ResponseMatrix) -> Result<(Vec<i128>, i128), PsychometricsError> {
    let masked = m.masked_count();
    if masked > 0 {
        return Err(PsychometricsError::MaskedCells(masked));
    }
    let n = m.n_students() as i128;
    let items = (0..m.n_questions())
        .map(|q| {
            let s = m.column(q).filter(|v| *v == Some(true)).count() as i128;
            n * s - s * s
        })
        .collect();
    let (mut sum_t, mut sum_t2) = (0i128, 0i128);
    for s in 0..m.n_students() {
        let t = (0..m.n_questions()).filter(|&q| m.get(s, q) == Some(true)).count() as i128;
        sum_t += t;
        sum_t2 += t * t;
    }
    Ok((items, n * sum_t2 - sum_t * sum_t))
}

pub fn item_variances(m: &ResponseMatrix, convention: VarianceConvention) -> Result<Vec<f64>, PsychometricsError> {
    let (items, _) = variance_numerators(m)?;
    let n = m.n_students();
    Ok(items
        .into_iter()
        .map(|v| v as f64 / (n as f64 * convention.divisor(n)))
        .collect())
}

pub fn total_score_variance(m: &ResponseMatrix, convention: VarianceConvention) -> Result<f64, PsychometricsError> {
    let (_, total) = variance_numerators(m)?;
    let n = m.n_students();
    Ok(total as f64 / (n as f64 * convention.divisor(n)))
}

/// Cronbach's alpha, `K/(K-1) * (1 - sum(item variances) / total variance)`.
///
/// Computed from exact integer sums. The variance divisor cancels in the
/// ratio, so the result is the same under either [`VarianceConvention`], and
/// `K` identical non-constant columns give exactly 1.0.
pub fn cronbach_alpha(m: &ResponseMatrix) -> Result<f64, PsychometricsError> {
    if m.n_questions() < 2 {
        return Err(PsychometricsError::TooFew {
            what: "questions",
            needed: 2,
            got: m.n_questions(),
        });
    }
    if m.n_students() < 2 {
        return Err(PsychometricsError::TooFew {
            what: "students",
            needed: 2,
            got: m.n_students(),
        });
    }
    let (items, total) = variance_numerators(m)?;
    if total == 0 {
        return Err(PsychometricsError::ZeroTotalVariance);
    }
    let k = m.n_questions() as i128;
    let item_sum: i128 = items.iter().sum();
    Ok((k * (total - item_sum)) as f64 / ((k - 1) * total) as f64)
}

/// Alpha over the complete rows of `m`, with the ids of dropped students.
pub fn cronbach_alpha_complete(m: &ResponseMatrix) -> Result<(f64, Vec<String>), PsychometricsError> {
    let (complete, dropped) = m.complete_rows();
    if !dropped.is_empty() {
        log::warn!("alpha: dropping {} student(s) with missing responses", dropped.len());
    }
    Ok((cronbach_alpha(&complete)?, dropped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
    Neither,
}

impl Difficulty {
    pub fn marker(self) -> &'static str {
        match self {
            Self::Easy => "(+)",
            Self::Hard => "(-)",
            Self::Neither => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Inclusive lower bound for easy items.
    pub easy: f64,
    /// Exclusive upper bound for hard items.
    pub hard: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            easy: EASY_THRESHOLD,
            hard: HARD_THRESHOLD,
        }
    }
}

/// Easy iff `mean >= easy`, hard iff `mean < hard`.
pub fn classify_items(means: &[f64], thresholds: Thresholds) -> Vec<Difficulty> {
    means
        .iter()
        .map(|&m| {
            if m >= thresholds.easy {
                Difficulty::Easy
            } else if m < thresholds.hard {
                Difficulty::Hard
            } else {
                Difficulty::Neither
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorReport {
    pub question_id: String,
    pub n_responses: usize,
    /// Selection frequency of every option, in option order.
    pub frequencies: Vec<f64>,
    /// Wrong options chosen by more than the threshold share of responders.
    pub flagged: Vec<char>,
}

/// Wrong options whose share of all responders exceeds `threshold`.
pub fn distractor_analysis(responses: &[Response], questions: &[Question], threshold: f64) -> Vec<DistractorReport> {
    let mut counts: HashMap<&str, Vec<usize>> = questions
        .iter()
        .map(|q| (q.id.as_str(), vec![0; q.options.len()]))
        .collect();
    for r in responses {
        if let Some(c) = counts.get_mut(r.question_id.as_str()) {
            if let Some(slot) = c.get_mut(r.chosen_index) {
                *slot += 1;
            }
        }
    }
    questions
        .iter()
        .map(|q| {
            let c = &counts[q.id.as_str()];
            let n: usize = c.iter().sum();
            let frequencies: Vec<f64> = c
                .iter()
                .map(|&k| if n == 0 { 0.0 } else { k as f64 / n as f64 })
                .collect();
            let flagged = frequencies
                .iter()
                .enumerate()
                .filter(|&(i, &f)| i != q.correct_index && f > threshold)
                .map(|(i, _)| option_letter(i))
                .collect();
            DistractorReport {
                question_id: q.id.clone(),
                n_responses: n,
                frequencies,
                flagged,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracyCell {
    pub key: CalibrationKey,
    pub n: usize,
    pub n_correct: usize,
    pub pct_correct: Option<f64>,
    pub n_wrong: usize,
    pub n_picked_confused: usize,
    /// Share of wrong answers on the confused rule; only defined when a
    /// confused rule is among the distractors.
    pub pct_confused_among_wrong: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAccuracyTable {
    pub cells: Vec<ConditionAccuracyCell>,
}

impl ConditionAccuracyTable {
    pub fn cell(&self, key: CalibrationKey) -> Option<&ConditionAccuracyCell> {
        self.cells.iter().find(|c| c.key == key)
    }

    pub fn total(&self) -> usize {
        self.cells.iter().map(|c| c.n).sum()
    }
}

/// Aggregate responses into the six condition cells plus two focused cells.
pub fn condition_accuracy_table(responses: &[Response]) -> ConditionAccuracyTable {
    let mut tallies: BTreeMap<CalibrationKey, (usize, usize, usize)> = BTreeMap::new();
    for r in responses {
        let key = CalibrationKey::new(
            r.condition.answer_status,
            r.condition.confusion_in_distractors,
            r.focused,
        );
        let t = tallies.entry(key).or_default();
        t.0 += 1;
        if r.correct {
            t.1 += 1;
        } else if r.picked_confused {
            t.2 += 1;
        }
    }
    let cells = CalibrationKey::all()
        .into_iter()
        .map(|key| {
            let (n, n_correct, n_picked) = tallies.get(&key).copied().unwrap_or_default();
            let n_wrong = n - n_correct;
            ConditionAccuracyCell {
                key,
                n,
                n_correct,
                pct_correct: (n > 0).then(|| n_correct as f64 / n as f64),
                n_wrong,
                n_picked_confused: n_picked,
                pct_confused_among_wrong: (key.confusion_in_distractors && n_wrong > 0)
                    .then(|| n_picked as f64 / n_wrong as f64),
            }
        })
        .collect();
    ConditionAccuracyTable { cells }
}

/// Item-level summary of one cohort; item means may come from a matrix or
/// from published aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub name: String,
    pub questions: Vec<String>,
    pub item_means: Vec<f64>,
    pub alpha: Option<f64>,
}

impl CohortSummary {
    pub fn from_matrix(name: impl Into<String>, m: &ResponseMatrix) -> Result<Self, PsychometricsError> {
        let alpha = match cronbach_alpha_complete(m) {
            Ok((a, _)) => Some(a),
            Err(e) => {
                log::warn!("alpha unavailable: {e}");
                None
            }
        };
        Ok(Self {
            name: name.into(),
            questions: m.questions().to_vec(),
            item_means: item_means(m)?,
            alpha,
        })
    }

    pub fn difficulties(&self, thresholds: Thresholds) -> Vec<Difficulty> {
        classify_items(&self.item_means, thresholds)
    }

    fn ids_with(&self, thresholds: Thresholds, d: Difficulty) -> Vec<String> {
        self.questions
            .iter()
            .zip(self.difficulties(thresholds))
            .filter(|(_, x)| *x == d)
            .map(|(q, _)| q.clone())
            .collect()
    }

    pub fn easy(&self, thresholds: Thresholds) -> Vec<String> {
        self.ids_with(thresholds, Difficulty::Easy)
    }

    pub fn hard(&self, thresholds: Thresholds) -> Vec<String> {
        self.ids_with(thresholds, Difficulty::Hard)
    }

    /// Means reordered to follow `order`.
    fn aligned_means(&self, order: &[String]) -> Result<Vec<f64>, PsychometricsError> {
        let own: BTreeSet<&String> = self.questions.iter().collect();
        let other: BTreeSet<&String> = order.iter().collect();
        if own != other || self.questions.len() != order.len() {
            let diff: Vec<&str> = own.symmetric_difference(&other).map(|s| s.as_str()).collect();
            return Err(PsychometricsError::QuestionSetMismatch(diff.join(", ")));
        }
        let idx: HashMap<&str, usize> = self
            .questions
            .iter()
            .enumerate()
            .map(|(i, q)| (q.as_str(), i))
            .collect();
        Ok(order.iter().map(|q| self.item_means[idx[q.as_str()]]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortComparison {
    pub first: String,
    pub second: String,
    pub questions: Vec<String>,
    pub first_means: Vec<f64>,
    pub second_means: Vec<f64>,
    pub pearson_r: Option<f64>,
    pub first_alpha: Option<f64>,
    pub second_alpha: Option<f64>,
    pub first_easy: Vec<String>,
    pub second_easy: Vec<String>,
    pub first_hard: Vec<String>,
    pub second_hard: Vec<String>,
    pub easy_overlap: Vec<String>,
    pub hard_overlap: Vec<String>,
}

pub fn compare_summaries(
    a: &CohortSummary,
    b: &CohortSummary,
    thresholds: Thresholds,
) -> Result<CohortComparison, PsychometricsError> {
    let questions = a.questions.clone();
    let first_means = a.item_means.clone();
    let second_means = b.aligned_means(&questions)?;
    let b_aligned = CohortSummary {
        questions: questions.clone(),
        item_means: second_means.clone(),
        ..b.clone()
    };
    let (first_easy, second_easy) = (a.easy(thresholds), b_aligned.easy(thresholds));
    let (first_hard, second_hard) = (a.hard(thresholds), b_aligned.hard(thresholds));
    let overlap = |x: &[String], y: &[String]| x.iter().filter(|q| y.contains(q)).cloned().collect::<Vec<_>>();
    Ok(CohortComparison {
        first: a.name.clone(),
        second: b.name.clone(),
        pearson_r: pearson_r(&first_means, &second_means).ok(),
        first_alpha: a.alpha,
        second_alpha: b.alpha,
        easy_overlap: overlap(&first_easy, &second_easy),
        hard_overlap: overlap(&first_hard, &second_hard),
        questions,
        first_means,
        second_means,
        first_easy,
        second_easy,
        first_hard,
        second_hard,
    })
}

pub fn compare_cohorts(a: &ResponseMatrix, b: &ResponseMatrix) -> Result<CohortComparison, PsychometricsError> {
    compare_summaries(
        &CohortSummary::from_matrix("a", a)?,
        &CohortSummary::from_matrix("b", b)?,
        Thresholds::default(),
    )
}

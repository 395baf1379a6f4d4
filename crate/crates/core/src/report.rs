//! Item-analysis and crossover reports in JSON and Markdown.
//!
//! Numbers are rounded to four decimals once, when the [`Report`] is built,
//! and both renderings print those same values.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::backend::LogRecord;
use crate::experiment::{FormEffect, SharedQuestionCheck};
use crate::fixtures::ItemMeansFixture;
use crate::knowledge::{AnswerStatus, Question};
use crate::psychometrics::{
    compare_summaries, condition_accuracy_table, cronbach_alpha_complete, distractor_analysis, item_means,
    CohortSummary, ConditionAccuracyTable, Difficulty, PsychometricsError, ResponseMatrix, Thresholds,
    DISTRACTOR_THRESHOLD,
};

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Everything known about one cohort before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportCohort {
    pub summary: CohortSummary,
    pub n_students: Option<usize>,
    pub n_dropped_for_alpha: usize,
    /// Flagged distractor letters by question id.
    pub distractors: BTreeMap<String, Vec<char>>,
    pub conditions: Option<ConditionAccuracyTable>,
}

impl ReportCohort {
    pub fn from_matrix(name: &str, m: &ResponseMatrix) -> Result<Self, PsychometricsError> {
        let (alpha, dropped) = match cronbach_alpha_complete(m) {
            Ok((a, dropped)) => (Some(a), dropped.len()),
            Err(e) => {
                log::warn!("{name}: alpha unavailable: {e}");
                (None, m.complete_rows().1.len())
            }
        };
        Ok(Self {
            summary: CohortSummary {
                name: name.to_string(),
                questions: m.questions().to_vec(),
                item_means: item_means(m)?,
                alpha,
            },
            n_students: Some(m.n_students()),
            n_dropped_for_alpha: dropped,
            distractors: BTreeMap::new(),
            conditions: None,
        })
    }

    /// Build from a response log; students are taken in first-seen order.
    pub fn from_log(name: &str, records: &[LogRecord], questions: &[Question]) -> Result<Self, PsychometricsError> {
        let mut seen = std::collections::HashSet::new();
        let students: Vec<String> = records
            .iter()
            .filter(|r| seen.insert(r.student_id()))
            .map(|r| r.student_id().to_string())
            .collect();
        let m = ResponseMatrix::from_log(records, students, questions.iter().map(|q| q.id.clone()).collect())?;
        let mut cohort = Self::from_matrix(name, &m)?;
        let responses: Vec<_> = records.iter().filter_map(LogRecord::response).cloned().collect();
        cohort.distractors = distractor_analysis(&responses, questions, DISTRACTOR_THRESHOLD)
            .into_iter()
            .filter(|d| !d.flagged.is_empty())
            .map(|d| (d.question_id, d.flagged))
            .collect();
        cohort.conditions = Some(condition_accuracy_table(&responses));
        Ok(cohort)
    }

    /// A published cohort: item means, alpha and distractor flags as printed.
    pub fn from_fixture(fixture: &ItemMeansFixture, name: &str) -> Option<Self> {
        let c = fixture.cohort(name)?;
        Some(Self {
            summary: fixture.summary(name)?,
            n_students: None,
            n_dropped_for_alpha: 0,
            distractors: c.distractors.clone(),
            conditions: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub question_id: String,
    pub mean: f64,
    pub difficulty: Difficulty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardQuestionDistractors {
    pub question_id: String,
    pub flagged: Vec<char>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub correct_answer: AnswerStatus,
    pub confusion_in_distractors: bool,
    pub focused: bool,
    pub n: usize,
    pub pct_correct: Option<f64>,
    pub pct_confused_among_wrong: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub name: String,
    pub n_students: Option<usize>,
    pub alpha: Option<f64>,
    pub n_dropped_for_alpha: usize,
    pub items: Vec<ItemRow>,
    pub easy: Vec<String>,
    pub hard: Vec<String>,
    pub hard_question_distractors: Vec<HardQuestionDistractors>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<ConditionRow>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub first: String,
    pub second: String,
    pub pearson_r: Option<f64>,
    pub easy_overlap: Vec<String>,
    pub hard_overlap: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub thresholds: Thresholds,
    pub cohorts: Vec<CohortReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparisons: Vec<ComparisonReport>,
}

/// Assemble per-cohort sections and every pairwise comparison.
pub fn render_report(cohorts: &[ReportCohort], thresholds: Thresholds) -> Result<Report, PsychometricsError> {
    let sections = cohorts
        .iter()
        .map(|c| {
            let s = &c.summary;
            let difficulties = s.difficulties(thresholds);
            let items = s
                .questions
                .iter()
                .zip(&s.item_means)
                .zip(&difficulties)
                .map(|((q, &m), &d)| ItemRow {
                    question_id: q.clone(),
                    mean: round4(m),
                    difficulty: d,
                })
                .collect();
            let hard = s.hard(thresholds);
            CohortReport {
                name: s.name.clone(),
                n_students: c.n_students,
                alpha: s.alpha.map(round4),
                n_dropped_for_alpha: c.n_dropped_for_alpha,
                items,
                easy: s.easy(thresholds),
                hard_question_distractors: hard
                    .iter()
                    .filter_map(|q| {
                        c.distractors.get(q).map(|f| HardQuestionDistractors {
                            question_id: q.clone(),
                            flagged: f.clone(),
                        })
                    })
                    .collect(),
                hard,
                conditions: c.conditions.as_ref().map(|t| {
                    t.cells
                        .iter()
                        .map(|cell| ConditionRow {
                            correct_answer: cell.key.status,
                            confusion_in_distractors: cell.key.confusion_in_distractors,
                            focused: cell.key.focused,
                            n: cell.n,
                            pct_correct: cell.pct_correct.map(|p| round4(100.0 * p)),
                            pct_confused_among_wrong: cell.pct_confused_among_wrong.map(|p| round4(100.0 * p)),
                        })
                        .collect()
                }),
            }
        })
        .collect();
    let mut comparisons = Vec::new();
    for (i, a) in cohorts.iter().enumerate() {
        for b in &cohorts[i + 1..] {
            let c = compare_summaries(&a.summary, &b.summary, thresholds)?;
            comparisons.push(ComparisonReport {
                first: c.first,
                second: c.second,
                pearson_r: c.pearson_r.map(round4),
                easy_overlap: c.easy_overlap,
                hard_overlap: c.hard_overlap,
            });
        }
    }
    Ok(Report {
        thresholds,
        cohorts: sections,
        comparisons,
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| v.to_string())
}

fn list(xs: &[String]) -> String {
    if xs.is_empty() {
        "none".to_string()
    } else {
        xs.join(", ")
    }
}

fn letters(xs: &[char]) -> String {
    xs.iter().map(char::to_string).collect::<Vec<_>>().join(", ")
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable report");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "# Item analysis").unwrap();
        writeln!(
            w,
            "\nEasy: mean >= {}. Hard: mean < {}.",
            self.thresholds.easy, self.thresholds.hard
        )
        .unwrap();
        for c in &self.cohorts {
            writeln!(w, "\n## Cohort `{}`\n", c.name).unwrap();
            if let Some(n) = c.n_students {
                writeln!(w, "- Students: {n}").unwrap();
            }
            writeln!(w, "- Cronbach's alpha: {}", opt(c.alpha)).unwrap();
            if c.n_dropped_for_alpha > 0 {
                writeln!(
                    w,
                    "- Students dropped from alpha (missing responses): {}",
                    c.n_dropped_for_alpha
                )
                .unwrap();
            }
            writeln!(w, "- Easy questions: {}", list(&c.easy)).unwrap();
            writeln!(w, "- Hard questions: {}", list(&c.hard)).unwrap();
            writeln!(w, "\n| Question | Mean | Marker |\n|---|---|---|").unwrap();
            for item in &c.items {
                writeln!(
                    w,
                    "| {} | {} | {} |",
                    item.question_id,
                    item.mean,
                    item.difficulty.marker()
                )
                .unwrap();
            }
            if !c.hard_question_distractors.is_empty() {
                writeln!(w, "\nDistractors chosen by more than 25% on hard questions:\n").unwrap();
                writeln!(w, "| Question | Options |\n|---|---|").unwrap();
                for d in &c.hard_question_distractors {
                    writeln!(w, "| {} | {} |", d.question_id, letters(&d.flagged)).unwrap();
                }
            }
            if let Some(rows) = &c.conditions {
                writeln!(w, "\nAccuracy by condition:\n").unwrap();
                writeln!(
                    w,
                    "| Correct answer | Confusion in other options | Focused | Responses | % correct | % choosing confused rule |\n|---|---|---|---|---|---|"
                )
                .unwrap();
                for r in rows {
                    writeln!(
                        w,
                        "| {} | {} | {} | {} | {} | {} |",
                        r.correct_answer,
                        if r.confusion_in_distractors { "yes" } else { "no" },
                        if r.focused { "yes" } else { "no" },
                        r.n,
                        opt(r.pct_correct),
                        opt(r.pct_confused_among_wrong)
                    )
                    .unwrap();
                }
            }
        }
        if !self.comparisons.is_empty() {
            writeln!(w, "\n## Comparisons\n").unwrap();
            writeln!(
                w,
                "| First | Second | Pearson r | Easy overlap | Hard overlap |\n|---|---|---|---|---|"
            )
            .unwrap();
            for c in &self.comparisons {
                writeln!(
                    w,
                    "| {} | {} | {} | {} ({}) | {} ({}) |",
                    c.first,
                    c.second,
                    opt(c.pearson_r),
                    c.easy_overlap.len(),
                    list(&c.easy_overlap),
                    c.hard_overlap.len(),
                    list(&c.hard_overlap)
                )
                .unwrap();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub source: String,
    pub warnings: Vec<String>,
    pub randomization: Vec<SharedQuestionCheck>,
    pub form_effect: FormEffect,
}

impl ExperimentReport {
    /// Round every reported number to four decimals.
    pub fn new(source: &str, warnings: Vec<String>, randomization: Vec<SharedQuestionCheck>, fe: FormEffect) -> Self {
        let randomization = randomization
            .into_iter()
            .map(|c| SharedQuestionCheck {
                mean_a: round4(c.mean_a),
                mean_b: round4(c.mean_b),
                diff: round4(c.diff),
                p_value: c.p_value.map(round4),
                ..c
            })
            .collect();
        let form_effect = FormEffect {
            questions: fe
                .questions
                .into_iter()
                .map(|q| crate::experiment::QuestionFormEffect {
                    original_mean: round4(q.original_mean),
                    revised_mean: round4(q.revised_mean),
                    diff: round4(q.diff),
                    ..q
                })
                .collect(),
            mean_improvement: round4(fe.mean_improvement),
            p_value: fe.p_value.map(round4),
            permutations: fe.permutations,
        };
        Self {
            source: source.to_string(),
            warnings,
            randomization,
            form_effect,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable report");
        s.push('\n');
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let w = &mut out;
        writeln!(w, "# Crossover analysis\n\nSource: {}", self.source).unwrap();
        for warning in &self.warnings {
            writeln!(w, "\nWarning: {warning}").unwrap();
        }
        if !self.randomization.is_empty() {
            writeln!(w, "\n## Shared questions\n").unwrap();
            writeln!(w, "| Question | Mean A | Mean B | A - B | p |\n|---|---|---|---|---|").unwrap();
            for c in &self.randomization {
                writeln!(
                    w,
                    "| {} | {} | {} | {} | {} |",
                    c.question_id,
                    c.mean_a,
                    c.mean_b,
                    c.diff,
                    opt(c.p_value)
                )
                .unwrap();
            }
        }
        writeln!(w, "\n## Revised versus original\n").unwrap();
        writeln!(
            w,
            "| Question | Revised in | Original | Revised | Difference |\n|---|---|---|---|---|"
        )
        .unwrap();
        let fe = &self.form_effect;
        for q in &fe.questions {
            writeln!(
                w,
                "| {} | {} | {} | {} | {} |",
                q.question_id, q.revised_in, q.original_mean, q.revised_mean, q.diff
            )
            .unwrap();
        }
        writeln!(w, "\n- Mean improvement: {}", fe.mean_improvement).unwrap();
        match fe.p_value {
            Some(p) => writeln!(w, "- Permutation p-value: {p} ({} permutations)", fe.permutations).unwrap(),
            None => writeln!(w, "- Permutation p-value: n/a (aggregate means only)").unwrap(),
        }
        out
    }
}

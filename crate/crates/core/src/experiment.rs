//! Two-version crossover quiz analysis.
//!
//! Each revised question is shown in its revised form in one version and in
//! its original form in the other; shared questions are identical in both and
//! serve as a randomization check. Inference is a seeded permutation test
//! over students' version labels.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PERMUTATIONS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Version {
    A,
    B,
}

impl Version {
    pub fn other(self) -> Self {
        match self {
            Self::A => Self::B,
            Self::B => Self::A,
        }
    }
}

impl std::fmt::Display for Version {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Original,
    Revised,
}

/// The form a question takes in each version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub question: String,
    pub a: Form,
    pub b: Form,
}

impl Variant {
    pub fn form_in(&self, version: Version) -> Form {
        match version {
            Version::A => self.a,
            Version::B => self.b,
        }
    }

    /// The version showing the revised form, if exactly one does.
    pub fn revised_in(&self) -> Option<Version> {
        match (self.a, self.b) {
            (Form::Revised, Form::Original) => Some(Version::A),
            (Form::Original, Form::Revised) => Some(Version::B),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossoverDesign {
    pub version_a: Vec<String>,
    pub version_b: Vec<String>,
    pub shared: Vec<String>,
    #[serde(default, rename = "variant")]
    pub variants: Vec<Variant>,
}

impl CrossoverDesign {
    pub fn questions(&self, version: Version) -> &[String] {
        match version {
            Version::A => &self.version_a,
            Version::B => &self.version_b,
        }
    }

    pub fn variant(&self, question: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.question == question)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExperimentError {
    #[error("question {0} is revised in both versions")]
    RevisedInBoth(String),
    #[error("question {0} is revised in neither version")]
    RevisedInNeither(String),
    #[error("question {0} must appear in both versions")]
    NotInBothVersions(String),
    #[error("question {0} is neither shared nor a revised question")]
    Unclassified(String),
    #[error("question {0} is listed as both shared and revised")]
    SharedAndRevised(String),
    #[error("question {0} is listed twice")]
    DuplicateQuestion(String),
    #[error("student {0} appears twice")]
    DuplicateStudent(String),
    #[error("student {student} has a score for {question}, which is not in version {version}")]
    ScoreOutsideVersion {
        student: String,
        question: String,
        version: Version,
    },
    #[error("version {0} has no respondents")]
    EmptyVersion(Version),
    #[error("question {question} has no respondents in its {form:?} form")]
    NoRespondents { question: String, form: Form },
    #[error("no mean given for {question} in version {version}")]
    MissingAggregate { question: String, version: Version },
}

/// Outcome of a successful validation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignReport {
    pub warnings: Vec<String>,
}

impl DesignReport {
    pub fn randomization_check_available(&self) -> bool {
        self.warnings.is_empty()
    }
}

pub fn validate_design(d: &CrossoverDesign) -> Result<DesignReport, ExperimentError> {
    let mut sets = Vec::new();
    for list in [&d.version_a, &d.version_b, &d.shared] {
        let mut seen = BTreeSet::new();
        if let Some(dup) = list.iter().find(|q| !seen.insert(q.as_str())) {
            return Err(ExperimentError::DuplicateQuestion(dup.clone()));
        }
        sets.push(seen);
    }
    let (a, b, shared) = (&sets[0], &sets[1], &sets[2]);
    let mut revised = BTreeSet::new();
    for v in &d.variants {
        if !revised.insert(v.question.as_str()) {
            return Err(ExperimentError::DuplicateQuestion(v.question.clone()));
        }
        match (v.a, v.b) {
            (Form::Revised, Form::Revised) => return Err(ExperimentError::RevisedInBoth(v.question.clone())),
            (Form::Original, Form::Original) => return Err(ExperimentError::RevisedInNeither(v.question.clone())),
            _ => {}
        }
        if shared.contains(v.question.as_str()) {
            return Err(ExperimentError::SharedAndRevised(v.question.clone()));
        }
    }
    for q in shared.iter().chain(revised.iter()) {
        if !a.contains(q) || !b.contains(q) {
            return Err(ExperimentError::NotInBothVersions(q.to_string()));
        }
    }
    if let Some(q) = a.union(b).find(|q| !shared.contains(*q) && !revised.contains(*q)) {
        return Err(ExperimentError::Unclassified(q.to_string()));
    }
    let mut report = DesignReport::default();
    if shared.is_empty() {
        report
            .warnings
            .push("no shared questions: randomization check unavailable".to_string());
    }
    Ok(report)
}

/// The classroom design: A revises Q9 and Q20, B revises Q3 and Q13, and
/// Q1, Q5, Q7 are shared.
pub fn reference_design() -> CrossoverDesign {
    let ids = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let variant = |q: &str, a, b| Variant {
        question: q.to_string(),
        a,
        b,
    };
    CrossoverDesign {
        version_a: ids(&["Q3", "Q9", "Q13", "Q20", "Q5", "Q1", "Q7"]),
        version_b: ids(&["Q3", "Q9", "Q13", "Q20", "Q5", "Q1", "Q7"]),
        shared: ids(&["Q5", "Q1", "Q7"]),
        variants: vec![
            variant("Q3", Form::Original, Form::Revised),
            variant("Q9", Form::Revised, Form::Original),
            variant("Q13", Form::Original, Form::Revised),
            variant("Q20", Form::Revised, Form::Original),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizStudent {
    pub id: String,
    pub version: Version,
    pub scores: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizResponses {
    pub students: Vec<QuizStudent>,
}

impl QuizResponses {
    pub fn validate(&self, d: &CrossoverDesign) -> Result<(), ExperimentError> {
        let mut seen = BTreeSet::new();
        for s in &self.students {
            if !seen.insert(s.id.as_str()) {
                return Err(ExperimentError::DuplicateStudent(s.id.clone()));
            }
            let allowed = d.questions(s.version);
            if let Some(q) = s.scores.keys().find(|q| !allowed.contains(q)) {
                return Err(ExperimentError::ScoreOutsideVersion {
                    student: s.id.clone(),
                    question: q.clone(),
                    version: s.version,
                });
            }
        }
        for v in [Version::A, Version::B] {
            if !self.students.iter().any(|s| s.version == v) {
                return Err(ExperimentError::EmptyVersion(v));
            }
        }
        Ok(())
    }

    pub fn count(&self, version: Version) -> usize {
        self.students.iter().filter(|s| s.version == version).count()
    }
}

/// Published per-version item means and group sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMeans {
    pub n_a: usize,
    pub n_b: usize,
    pub a: BTreeMap<String, f64>,
    pub b: BTreeMap<String, f64>,
}

impl AggregateMeans {
    pub fn n(&self, version: Version) -> usize {
        match version {
            Version::A => self.n_a,
            Version::B => self.n_b,
        }
    }

    pub fn mean(&self, version: Version, question: &str) -> Result<f64, ExperimentError> {
        let map = match version {
            Version::A => &self.a,
            Version::B => &self.b,
        };
        map.get(question)
            .copied()
            .ok_or_else(|| ExperimentError::MissingAggregate {
                question: question.to_string(),
                version,
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub permutations: usize,
    pub seed: u64,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            permutations: DEFAULT_PERMUTATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedQuestionCheck {
    pub question_id: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    /// `mean_a - mean_b`.
    pub diff: f64,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionFormEffect {
    pub question_id: String,
    pub revised_in: Version,
    pub original_mean: f64,
    pub revised_mean: f64,
    pub n_original: usize,
    pub n_revised: usize,
    /// `revised_mean - original_mean`.
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormEffect {
    pub questions: Vec<QuestionFormEffect>,
    /// Arithmetic mean of the per-question diffs.
    pub mean_improvement: f64,
    pub p_value: Option<f64>,
    pub permutations: usize,
}

/// Per-question (student index, score) lists, in design question order.
struct ScoreColumns {
    columns: Vec<Vec<(usize, bool)>>,
}

impl ScoreColumns {
    fn new(responses: &QuizResponses, questions: &[String]) -> Self {
        let columns = questions
            .iter()
            .map(|q| {
                responses
                    .students
                    .iter()
                    .enumerate()
                    .filter_map(|(i, s)| s.scores.get(q).map(|&v| (i, v)))
                    .collect()
            })
            .collect();
        Self { columns }
    }

    /// `(n_a, ones_a, n_b, ones_b)` for column `c` under `is_a` labels.
    fn tally(&self, c: usize, is_a: &[bool]) -> (usize, usize, usize, usize) {
        let mut t = (0, 0, 0, 0);
        for &(s, v) in &self.columns[c] {
            if is_a[s] {
                t.0 += 1;
                t.1 += v as usize;
            } else {
                t.2 += 1;
                t.3 += v as usize;
            }
        }
        t
    }
}

fn ratio(ones: usize, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        ones as f64 / n as f64
    }
}

/// Two-sided p-values `(1 + #{|T*| >= |T|}) / (1 + P)` for each component of
/// a vector statistic, permuting version labels across students.
///
/// Permutation `i` shuffles with its own ChaCha stream, so the result does
/// not depend on thread scheduling.
fn permutation_p_values<F>(labels: &[bool], config: PermutationConfig, stat: F) -> Vec<f64>
where
    F: Fn(&[bool]) -> Vec<f64> + Sync,
{
    let observed = stat(labels);
    let tolerance = 1e-12;
    let counts = (0..config.permutations)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let mut shuffled = labels.to_vec();
            shuffled.shuffle(&mut rng);
            stat(&shuffled)
                .iter()
                .zip(&observed)
                .map(|(t, o)| (t.abs() >= o.abs() - tolerance) as usize)
                .collect::<Vec<_>>()
        })
        .reduce(
            || vec![0; observed.len()],
            |mut acc, x| {
                acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
                acc
            },
        );
    counts
        .into_iter()
        .map(|c| (c + 1) as f64 / (config.permutations + 1) as f64)
        .collect()
}

fn labels(responses: &QuizResponses) -> Vec<bool> {
    responses.students.iter().map(|s| s.version == Version::A).collect()
}

/// Per shared question: mean by version and a permutation p-value for the
/// difference.
pub fn randomization_check(
    responses: &QuizResponses,
    d: &CrossoverDesign,
    config: PermutationConfig,
) -> Result<Vec<SharedQuestionCheck>, ExperimentError> {
    responses.validate(d)?;
    let cols = ScoreColumns::new(responses, &d.shared);
    let is_a = labels(responses);
    let diffs = |lab: &[bool]| -> Vec<f64> {
        (0..d.shared.len())
            .map(|c| {
                let (na, oa, nb, ob) = cols.tally(c, lab);
                if na == 0 || nb == 0 {
                    0.0
                } else {
                    ratio(oa, na) - ratio(ob, nb)
                }
            })
            .collect()
    };
    let p = permutation_p_values(&is_a, config, diffs);
    Ok(d.shared
        .iter()
        .enumerate()
        .map(|(c, q)| {
            let (na, oa, nb, ob) = cols.tally(c, &is_a);
            let (mean_a, mean_b) = (ratio(oa, na), ratio(ob, nb));
            SharedQuestionCheck {
                question_id: q.clone(),
                mean_a,
                mean_b,
                n_a: na,
                n_b: nb,
                diff: mean_a - mean_b,
                p_value: (na > 0 && nb > 0).then(|| p[c]),
            }
        })
        .collect())
}

/// Shared-question means straight from published aggregates.
pub fn randomization_check_from_aggregates(
    agg: &AggregateMeans,
    d: &CrossoverDesign,
) -> Result<Vec<SharedQuestionCheck>, ExperimentError> {
    d.shared
        .iter()
        .map(|q| {
            let (mean_a, mean_b) = (agg.mean(Version::A, q)?, agg.mean(Version::B, q)?);
            Ok(SharedQuestionCheck {
                question_id: q.clone(),
                mean_a,
                mean_b,
                n_a: agg.n_a,
                n_b: agg.n_b,
                diff: mean_a - mean_b,
                p_value: None,
            })
        })
        .collect()
}

fn revised_questions(d: &CrossoverDesign) -> Vec<(&str, Version)> {
    d.variants
        .iter()
        .filter_map(|v| v.revised_in().map(|ver| (v.question.as_str(), ver)))
        .collect()
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Revised-minus-original means per question, their average, and a
/// permutation p-value for that average.
pub fn form_effect(
    responses: &QuizResponses,
    d: &CrossoverDesign,
    config: PermutationConfig,
) -> Result<FormEffect, ExperimentError> {
    validate_design(d)?;
    responses.validate(d)?;
    let revised = revised_questions(d);
    let ids: Vec<String> = revised.iter().map(|(q, _)| q.to_string()).collect();
    let cols = ScoreColumns::new(responses, &ids);
    let is_a = labels(responses);

    let mut questions = Vec::with_capacity(revised.len());
    for (c, &(q, rev)) in revised.iter().enumerate() {
        let (na, oa, nb, ob) = cols.tally(c, &is_a);
        let ((n_rev, o_rev), (n_orig, o_orig)) = match rev {
            Version::A => ((na, oa), (nb, ob)),
            Version::B => ((nb, ob), (na, oa)),
        };
        for (n, form) in [(n_rev, Form::Revised), (n_orig, Form::Original)] {
            if n == 0 {
                return Err(ExperimentError::NoRespondents {
                    question: q.to_string(),
                    form,
                });
            }
        }
        let (revised_mean, original_mean) = (ratio(o_rev, n_rev), ratio(o_orig, n_orig));
        questions.push(QuestionFormEffect {
            question_id: q.to_string(),
            revised_in: rev,
            original_mean,
            revised_mean,
            n_original: n_orig,
            n_revised: n_rev,
            diff: revised_mean - original_mean,
        });
    }
    let diffs: Vec<f64> = questions.iter().map(|q| q.diff).collect();
    let mean_improvement = mean_of(&diffs);

    let stat = |lab: &[bool]| -> Vec<f64> {
        let per_q: Vec<f64> = revised
            .iter()
            .enumerate()
            .map(|(c, &(_, rev))| {
                let (na, oa, nb, ob) = cols.tally(c, lab);
                if na == 0 || nb == 0 {
                    return 0.0;
                }
                let a_minus_b = ratio(oa, na) - ratio(ob, nb);
                match rev {
                    Version::A => a_minus_b,
                    Version::B => -a_minus_b,
                }
            })
            .collect();
        vec![mean_of(&per_q)]
    };
    let p_value = permutation_p_values(&is_a, config, stat)[0];
    Ok(FormEffect {
        questions,
        mean_improvement,
        p_value: Some(p_value),
        permutations: config.permutations,
    })
}

/// Descriptive form effect from published per-version means.
pub fn form_effect_from_aggregates(agg: &AggregateMeans, d: &CrossoverDesign) -> Result<FormEffect, ExperimentError> {
    validate_design(d)?;
    let mut questions = Vec::new();
    for (q, rev) in revised_questions(d) {
        let orig = rev.other();
        for (version, form) in [(rev, Form::Revised), (orig, Form::Original)] {
            if agg.n(version) == 0 {
                return Err(ExperimentError::NoRespondents {
                    question: q.to_string(),
                    form,
                });
            }
        }
        let (revised_mean, original_mean) = (agg.mean(rev, q)?, agg.mean(orig, q)?);
        questions.push(QuestionFormEffect {
            question_id: q.to_string(),
            revised_in: rev,
            original_mean,
            revised_mean,
            n_original: agg.n(orig),
            n_revised: agg.n(rev),
            diff: revised_mean - original_mean,
        });
    }
    let diffs: Vec<f64> = questions.iter().map(|q| q.diff).collect();
    Ok(FormEffect {
        mean_improvement: mean_of(&diffs),
        questions,
        p_value: None,
        permutations: 0,
    })
}

/// Per-student scores whose per-version means equal the aggregates rounded
/// to whole students. Which students score is drawn from `seed`.
pub fn reconstruct_responses(
    agg: &AggregateMeans,
    d: &CrossoverDesign,
    seed: u64,
) -> Result<QuizResponses, ExperimentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut students = Vec::new();
    for version in [Version::A, Version::B] {
        let n = agg.n(version);
        let mut block: Vec<QuizStudent> = (1..=n)
            .map(|i| QuizStudent {
                id: format!("{version}{i}"),
                version,
                scores: BTreeMap::new(),
            })
            .collect();
        for q in d.questions(version) {
            let ones = (agg.mean(version, q)? * n as f64).round() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            for (rank, &s) in order.iter().enumerate() {
                block[s].scores.insert(q.clone(), rank < ones.min(n));
            }
        }
        students.extend(block);
    }
    Ok(QuizResponses { students })
}

/// Independent Bernoulli scores: original forms and shared questions succeed
/// with `p_original`, revised forms with `p_original + revised_boost`.
pub fn synthetic_responses<R: Rng + ?Sized>(
    d: &CrossoverDesign,
    n_per_version: usize,
    p_original: f64,
    revised_boost: f64,
    rng: &mut R,
) -> QuizResponses {
    let p_revised = (p_original + revised_boost).clamp(0.0, 1.0);
    let mut students = Vec::with_capacity(2 * n_per_version);
    for version in [Version::A, Version::B] {
        for i in 1..=n_per_version {
            let scores = d
                .questions(version)
                .iter()
                .map(|q| {
                    let p = match d.variant(q).map(|v| v.form_in(version)) {
                        Some(Form::Revised) => p_revised,
                        _ => p_original,
                    };
                    (q.clone(), rng.gen::<f64>() < p)
                })
                .collect();
            students.push(QuizStudent {
                id: format!("{version}{i}"),
                version,
                scores,
            });
        }
    }
    QuizResponses { students }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(permutations: usize) -> PermutationConfig {
        PermutationConfig { permutations, seed: 17 }
    }

    #[test]
    fn reference_design_is_valid() {
        let report = validate_design(&reference_design()).unwrap();
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn revised_in_both_is_an_error() {
        let mut d = reference_design();
        d.variants[1].b = Form::Revised;
        assert_eq!(
            validate_design(&d).unwrap_err(),
            ExperimentError::RevisedInBoth("Q9".into())
        );
        d.variants[1] = Variant {
            question: "Q9".into(),
            a: Form::Original,
            b: Form::Original,
        };
        assert_eq!(
            validate_design(&d).unwrap_err(),
            ExperimentError::RevisedInNeither("Q9".into())
        );
    }

    #[test]
    fn no_shared_questions_warns() {
        let mut d = reference_design();
        for list in [&mut d.version_a, &mut d.version_b] {
            list.retain(|q| !["Q1", "Q5", "Q7"].contains(&q.as_str()));
        }
        d.shared.clear();
        let report = validate_design(&d).unwrap();
        assert!(!report.randomization_check_available());
    }

    #[test]
    fn structural_errors() {
        let mut d = reference_design();
        d.version_b.retain(|q| q != "Q20");
        assert_eq!(
            validate_design(&d).unwrap_err(),
            ExperimentError::NotInBothVersions("Q20".into())
        );
        let mut d = reference_design();
        d.version_a.push("Q2".into());
        assert_eq!(
            validate_design(&d).unwrap_err(),
            ExperimentError::Unclassified("Q2".into())
        );
        let mut d = reference_design();
        d.shared.push("Q3".into());
        assert_eq!(
            validate_design(&d).unwrap_err(),
            ExperimentError::SharedAndRevised("Q3".into())
        );
    }

    #[test]
    fn scores_outside_version_are_rejected() {
        let mut d = reference_design();
        d.version_a.push("Q2".into());
        d.version_b.push("Q2".into());
        d.shared.push("Q2".into());
        let mut r = QuizResponses {
            students: vec![QuizStudent {
                id: "s".into(),
                version: Version::A,
                scores: [("Q4".to_string(), true)].into(),
            }],
        };
        assert!(matches!(
            r.validate(&d),
            Err(ExperimentError::ScoreOutsideVersion { .. })
        ));
        r.students[0].scores.clear();
        assert_eq!(r.validate(&d).unwrap_err(), ExperimentError::EmptyVersion(Version::B));
    }

    fn mirrored(n: usize) -> QuizResponses {
        let d = reference_design();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = synthetic_responses(&d, n, 0.6, 0.0, &mut rng);
        let a: Vec<QuizStudent> = base
            .students
            .iter()
            .filter(|s| s.version == Version::A)
            .cloned()
            .collect();
        let b = a.iter().map(|s| QuizStudent {
            id: format!("m{}", s.id),
            version: Version::B,
            scores: s.scores.clone(),
        });
        QuizResponses {
            students: a.iter().cloned().chain(b).collect(),
        }
    }

    #[test]
    fn identical_groups_give_zero_diffs_and_p_one() {
        let d = reference_design();
        let r = mirrored(40);
        for c in randomization_check(&r, &d, cfg(500)).unwrap() {
            assert_eq!(c.diff, 0.0);
            assert_eq!(c.p_value, Some(1.0));
        }
    }

    #[test]
    fn identical_forms_give_zero_improvement() {
        // Revised questions scored the same whichever form a student saw.
        let d = reference_design();
        let mut r = mirrored(40);
        let n = r.students.len() / 2;
        for i in 0..n {
            let a_scores = r.students[i].scores.clone();
            r.students[n + i].scores = a_scores;
        }
        let fe = form_effect(&r, &d, cfg(500)).unwrap();
        assert!(fe.mean_improvement.abs() < 1e-15);
        assert_eq!(fe.p_value, Some(1.0));
    }

    #[test]
    fn large_shared_gap_is_detected() {
        let d = reference_design();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = synthetic_responses(&d, 100, 0.3, 0.0, &mut rng);
        for s in r.students.iter_mut().filter(|s| s.version == Version::A) {
            for q in &d.shared {
                s.scores.insert(q.clone(), rng.gen::<f64>() < 0.7);
            }
        }
        for c in randomization_check(&r, &d, cfg(2000)).unwrap() {
            assert!(c.p_value.unwrap() < 0.01, "{c:?}");
        }
    }

    #[test]
    fn permutation_is_deterministic_and_bounded() {
        let d = reference_design();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let r = synthetic_responses(&d, 30, 0.5, 0.1, &mut rng);
        let x = form_effect(&r, &d, cfg(300)).unwrap();
        let y = form_effect(&r, &d, cfg(300)).unwrap();
        assert_eq!(x, y);
        let p = x.p_value.unwrap();
        assert!(p > 0.0 && p <= 1.0);
        let mean: f64 = x.questions.iter().map(|q| q.diff).sum::<f64>() / x.questions.len() as f64;
        assert_eq!(x.mean_improvement, mean);
    }

    #[test]
    fn zero_respondent_form_is_an_error() {
        let d = reference_design();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut r = synthetic_responses(&d, 5, 0.5, 0.0, &mut rng);
        for s in r.students.iter_mut().filter(|s| s.version == Version::B) {
            s.scores.remove("Q3");
        }
        assert_eq!(
            form_effect(&r, &d, cfg(10)).unwrap_err(),
            ExperimentError::NoRespondents {
                question: "Q3".into(),
                form: Form::Revised
            }
        );
    }

    #[test]
    fn reconstruction_matches_rounded_aggregates() {
        let d = reference_design();
        let agg = AggregateMeans {
            n_a: 10,
            n_b: 8,
            a: d.version_a.iter().map(|q| (q.clone(), 0.5)).collect(),
            b: d.version_b.iter().map(|q| (q.clone(), 0.25)).collect(),
        };
        let r = reconstruct_responses(&agg, &d, 1).unwrap();
        r.validate(&d).unwrap();
        assert_eq!((r.count(Version::A), r.count(Version::B)), (10, 8));
        let fe = form_effect(&r, &d, cfg(50)).unwrap();
        let from_agg = form_effect_from_aggregates(&agg, &d).unwrap();
        for (x, y) in fe.questions.iter().zip(&from_agg.questions) {
            assert_eq!(x.diff, y.diff);
        }
    }
}

//! Teacher role-play prompt assembly.
//!
//! A prompt has three parts: an introduction framing the model as a teacher
//! predicting a student's choice, one segment per mastered KC and per
//! confusion pair, and the single target question. Unknown KCs contribute
//! nothing. Wording lives in a template asset (see [`PromptTemplate`]).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{
    letter_index, option_letter, ConfusionPair, KcId, KcUniverse, KnowledgeError, PairKey, Question, StudentProfile,
};

pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/prompt_template.txt");

/// An example question together with the answer the student gave.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExemplar", into = "RawExemplar")]
pub struct Exemplar {
    pub question: Question,
    /// Index of the option the student chose.
    pub answer: usize,
}

#[derive(Serialize, Deserialize)]
struct RawExemplar {
    question: Question,
    answer: String,
}

impl TryFrom<RawExemplar> for Exemplar {
    type Error = String;

    fn try_from(raw: RawExemplar) -> Result<Self, Self::Error> {
        let mut chars = raw.answer.trim().chars();
        match (chars.next().and_then(letter_index), chars.next()) {
            (Some(answer), None) => Ok(Exemplar {
                question: raw.question,
                answer,
            }),
            _ => Err(format!("answer must be a single option letter, got {:?}", raw.answer)),
        }
    }
}

impl From<Exemplar> for RawExemplar {
    fn from(e: Exemplar) -> Self {
        RawExemplar {
            question: e.question,
            answer: option_letter(e.answer).to_string(),
        }
    }
}

impl Exemplar {
    pub fn answer_kc(&self) -> Option<&KcId> {
        self.question.options.get(self.answer).map(|o| &o.kc)
    }
}

/// Instructor-supplied examples that render profile segments.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBank", into = "RawBank")]
pub struct ExemplarBank {
    pub mastery: BTreeMap<KcId, Exemplar>,
    /// Two wrong-answer examples per pair, one mistake in each direction.
    pub confusions: BTreeMap<PairKey, [Exemplar; 2]>,
    /// Two easy, correctly answered examples per pair for the focused variant.
    pub focused_extras: BTreeMap<PairKey, [Exemplar; 2]>,
}

#[derive(Serialize, Deserialize)]
struct RawBank {
    #[serde(default)]
    mastery: Vec<RawMastery>,
    #[serde(default)]
    confusions: Vec<RawPairExamples>,
    #[serde(default)]
    focused_extras: Vec<RawPairExamples>,
}

#[derive(Serialize, Deserialize)]
struct RawMastery {
    kc: KcId,
    #[serde(flatten)]
    example: Exemplar,
}

#[derive(Serialize, Deserialize)]
struct RawPairExamples {
    pair: PairKey,
    examples: Vec<Exemplar>,
}

impl TryFrom<RawBank> for ExemplarBank {
    type Error = String;

    fn try_from(raw: RawBank) -> Result<Self, Self::Error> {
        let mut bank = ExemplarBank::default();
        for m in raw.mastery {
            if bank.mastery.insert(m.kc.clone(), m.example).is_some() {
                return Err(format!("duplicate mastery example for {}", m.kc));
            }
        }
        for (name, entries, target) in [
            ("confusion", raw.confusions, &mut bank.confusions),
            ("focused extra", raw.focused_extras, &mut bank.focused_extras),
        ] {
            for e in entries {
                let n = e.examples.len();
                let pair: [Exemplar; 2] = e
                    .examples
                    .try_into()
                    .map_err(|_| format!("{name} entry {} needs exactly 2 examples, got {n}", e.pair))?;
                if target.insert(e.pair.clone(), pair).is_some() {
                    return Err(format!("duplicate {name} entry for {}", e.pair));
                }
            }
        }
        Ok(bank)
    }
}

impl From<ExemplarBank> for RawBank {
    fn from(bank: ExemplarBank) -> Self {
        let pairs = |m: BTreeMap<PairKey, [Exemplar; 2]>| {
            m.into_iter()
                .map(|(pair, ex)| RawPairExamples {
                    pair,
                    examples: ex.into(),
                })
                .collect()
        };
        RawBank {
            mastery: bank
                .mastery
                .into_iter()
                .map(|(kc, example)| RawMastery { kc, example })
                .collect(),
            confusions: pairs(bank.confusions),
            focused_extras: pairs(bank.focused_extras),
        }
    }
}

impl ExemplarBank {
    /// Check every exemplar against the universe and the bank invariants.
    pub fn validate(&self, universe: &KcUniverse) -> Result<(), PromptError> {
        let bad = |what: String, reason: String| PromptError::InvalidExemplar { what, reason };
        for (kc, ex) in &self.mastery {
            let what = format!("mastery example for {kc}");
            ex.question
                .validate(universe)
                .map_err(|e| bad(what.clone(), e.to_string()))?;
            if ex.question.correct_kc() != kc {
                return Err(bad(
                    what,
                    format!("correct option is tagged {}", ex.question.correct_kc()),
                ));
            }
            if ex.answer != ex.question.correct_index {
                return Err(bad(what, "student answer must be the correct option".into()));
            }
        }
        for (pair, examples) in &self.confusions {
            let what = format!("confusion examples for {pair}");
            let mut directions = BTreeSet::new();
            for ex in examples {
                ex.question
                    .validate(universe)
                    .map_err(|e| bad(what.clone(), e.to_string()))?;
                let correct = ex.question.correct_kc();
                let partner = pair
                    .partner(correct)
                    .ok_or_else(|| bad(what.clone(), format!("correct option {correct} is not in the pair")))?;
                if ex.answer_kc() != Some(partner) {
                    return Err(bad(
                        what.clone(),
                        format!("student answer must be the option tagged {partner}"),
                    ));
                }
                directions.insert(correct.clone());
            }
            if directions.len() != 2 {
                return Err(bad(what, "examples must show one mistake in each direction".into()));
            }
        }
        for (pair, examples) in &self.focused_extras {
            let what = format!("focused extras for {pair}");
            for ex in examples {
                ex.question
                    .validate(universe)
                    .map_err(|e| bad(what.clone(), e.to_string()))?;
                if !pair.contains(ex.question.correct_kc()) {
                    return Err(bad(what.clone(), "correct option must belong to the pair".into()));
                }
                if ex.answer != ex.question.correct_index {
                    return Err(bad(what.clone(), "student answer must be the correct option".into()));
                }
            }
        }
        Ok(())
    }

    /// Check that every segment `profile` needs is present.
    pub fn covers(&self, profile: &StudentProfile) -> Result<(), PromptError> {
        for kc in &profile.mastered {
            if !self.mastery.contains_key(kc) {
                return Err(PromptError::MissingMastery(kc.clone()));
            }
        }
        for pair in &profile.confusions {
            if !self.confusions.contains_key(&pair.key()) {
                return Err(PromptError::MissingConfusion(pair.key()));
            }
            if pair.is_focused() && !self.focused_extras.contains_key(&pair.key()) {
                return Err(PromptError::MissingFocused(pair.key()));
            }
        }
        Ok(())
    }
}

/// One emitted piece of a prompt, in emission order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "segment", rename_all = "snake_case")]
pub enum PromptSegment {
    Intro,
    Mastery {
        kc: KcId,
    },
    Confusion {
        pair: PairKey,
        focused: bool,
        examples: usize,
    },
    Target {
        question: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub manifest: Vec<PromptSegment>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("intro", &["student"]),
    ("option", &["letter", "text"]),
    ("question", &["stem", "options"]),
    (
        "mastery",
        &["student", "kc", "kc_label", "question", "answer_letter", "answer_text"],
    ),
    (
        "wrong_example",
        &[
            "student",
            "question",
            "answer_letter",
            "answer_text",
            "correct_letter",
            "correct_text",
        ],
    ),
    ("easy_example", &["student", "question", "answer_letter", "answer_text"]),
    (
        "confusion",
        &["student", "kc_a", "kc_b", "kc_a_label", "kc_b_label", "examples"],
    ),
    (
        "confusion_focused",
        &[
            "student",
            "kc_a",
            "kc_b",
            "kc_a_label",
            "kc_b_label",
            "examples",
            "easy_examples",
        ],
    ),
    ("target", &["student", "question"]),
];

/// Parsed template asset.
///
/// Sections and the placeholders each accepts:
///
/// | section | placeholders |
/// |---|---|
/// | `intro` | `student` |
/// | `option` | `letter`, `text` |
/// | `question` | `stem`, `options` |
/// | `mastery` | `student`, `kc`, `kc_label`, `question`, `answer_letter`, `answer_text` |
/// | `wrong_example` | `student`, `question`, `answer_letter`, `answer_text`, `correct_letter`, `correct_text` |
/// | `easy_example` | `student`, `question`, `answer_letter`, `answer_text` |
/// | `confusion` | `student`, `kc_a`, `kc_b`, `kc_a_label`, `kc_b_label`, `examples` |
/// | `confusion_focused` | as `confusion`, plus `easy_examples` |
/// | `target` | `student`, `question` |
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    sections: BTreeMap<String, String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let mut sections: BTreeMap<String, String> = BTreeMap::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let finish = |cur: Option<(String, Vec<&str>)>, sections: &mut BTreeMap<String, String>| {
            if let Some((name, lines)) = cur {
                let body = lines.join("\n").trim_matches('\n').trim_end().to_string();
                sections.insert(name, body);
            }
        };
        for (lineno, line) in source.lines().enumerate() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix("[[").and_then(|s| s.strip_suffix("]]")) {
                if sections.contains_key(name) || current.as_ref().is_some_and(|(n, _)| n == name) {
                    return Err(PromptError::Template(format!(
                        "line {}: duplicate section [[{name}]]",
                        lineno + 1
                    )));
                }
                finish(current.take(), &mut sections);
                current = Some((name.to_string(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !trimmed.is_empty() && !trimmed.starts_with('#') {
                return Err(PromptError::Template(format!(
                    "line {}: text outside of a section",
                    lineno + 1
                )));
            }
        }
        finish(current.take(), &mut sections);

        for name in sections.keys() {
            if !SECTIONS.iter().any(|(s, _)| s == name) {
                return Err(PromptError::Template(format!("unknown section [[{name}]]")));
            }
        }
        for (name, allowed) in SECTIONS {
            let body = sections
                .get(*name)
                .ok_or_else(|| PromptError::Template(format!("missing section [[{name}]]")))?;
            for placeholder in placeholders(body) {
                if !allowed.contains(&placeholder) {
                    return Err(PromptError::Template(format!(
                        "section [[{name}]] uses unknown placeholder {{{{{placeholder}}}}}"
                    )));
                }
            }
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let source = fs::read_to_string(path).map_err(|e| PromptError::Template(format!("{}: {e}", path.display())))?;
        Self::parse(&source)
    }

    fn render(&self, section: &str, values: &[(&str, &str)]) -> String {
        let body = &self.sections[section];
        let mut out = String::with_capacity(body.len() + 64);
        let mut rest = body.as_str();
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let name = &after[..end];
                    match values.iter().find(|(k, _)| *k == name) {
                        Some((_, v)) => out.push_str(v),
                        None => {
                            out.push_str("{{");
                            out.push_str(name);
                            out.push_str("}}");
                        }
                    }
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        out
    }
}

fn placeholders(body: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        out.push(&after[..end]);
        rest = &after[end + 2..];
    }
    out
}

/// Renders prompts for one universe and exemplar bank.
#[derive(Debug, Clone)]
pub struct PromptBuilder<'a> {
    universe: &'a KcUniverse,
    bank: &'a ExemplarBank,
    template: &'a PromptTemplate,
}

impl<'a> PromptBuilder<'a> {
    pub fn new(universe: &'a KcUniverse, bank: &'a ExemplarBank, template: &'a PromptTemplate) -> Self {
        Self {
            universe,
            bank,
            template,
        }
    }

    fn label(&self, kc: &KcId) -> String {
        self.universe.label(kc).unwrap_or(kc.as_str()).to_string()
    }

    fn question_block(&self, q: &Question) -> String {
        let options = q
            .options
            .iter()
            .enumerate()
            .map(|(i, o)| {
                let letter = option_letter(i).to_string();
                self.template
                    .render("option", &[("letter", &letter), ("text", &o.text)])
            })
            .collect::<Vec<_>>()
            .join("\n");
        self.template
            .render("question", &[("stem", &q.stem), ("options", &options)])
    }

    fn answered(&self, section: &str, student: &str, ex: &Exemplar, extra: &[(&str, &str)]) -> String {
        let question = self.question_block(&ex.question);
        let letter = option_letter(ex.answer).to_string();
        let text = &ex.question.options[ex.answer].text;
        let correct_letter = option_letter(ex.question.correct_index).to_string();
        let correct_text = &ex.question.options[ex.question.correct_index].text;
        let mut values: Vec<(&str, &str)> = vec![
            ("student", student),
            ("question", &question),
            ("answer_letter", &letter),
            ("answer_text", text),
            ("correct_letter", &correct_letter),
            ("correct_text", correct_text),
        ];
        values.extend_from_slice(extra);
        self.template.render(section, &values)
    }

    pub fn render_mastery_segment(&self, student: &str, kc: &KcId) -> Result<(String, PromptSegment), PromptError> {
        let ex = self
            .bank
            .mastery
            .get(kc)
            .ok_or_else(|| PromptError::MissingMastery(kc.clone()))?;
        let label = self.label(kc);
        let text = self.answered("mastery", student, ex, &[("kc", kc.as_str()), ("kc_label", &label)]);
        Ok((text, PromptSegment::Mastery { kc: kc.clone() }))
    }

    pub fn render_confusion_segment(
        &self,
        student: &str,
        pair: &ConfusionPair,
    ) -> Result<(String, PromptSegment), PromptError> {
        let key = pair.key();
        let wrong = self
            .bank
            .confusions
            .get(&key)
            .ok_or_else(|| PromptError::MissingConfusion(key.clone()))?;
        let examples = wrong
            .iter()
            .map(|ex| self.answered("wrong_example", student, ex, &[]))
            .collect::<Vec<_>>()
            .join("\n\n");
        let (a_label, b_label) = (self.label(pair.kc_a()), self.label(pair.kc_b()));
        let base = [
            ("student", student),
            ("kc_a", pair.kc_a().as_str()),
            ("kc_b", pair.kc_b().as_str()),
            ("kc_a_label", a_label.as_str()),
            ("kc_b_label", b_label.as_str()),
            ("examples", examples.as_str()),
        ];
        let (text, count) = if pair.is_focused() {
            let easy = self
                .bank
                .focused_extras
                .get(&key)
                .ok_or_else(|| PromptError::MissingFocused(key.clone()))?;
            let easy_examples = easy
                .iter()
                .map(|ex| self.answered("easy_example", student, ex, &[]))
                .collect::<Vec<_>>()
                .join("\n\n");
            let mut values = base.to_vec();
            values.push(("easy_examples", &easy_examples));
            (
                self.template.render("confusion_focused", &values),
                wrong.len() + easy.len(),
            )
        } else {
            (self.template.render("confusion", &base), wrong.len())
        };
        Ok((
            text,
            PromptSegment::Confusion {
                pair: key,
                focused: pair.is_focused(),
                examples: count,
            },
        ))
    }

    /// Assemble the full prompt for one student and one target question.
    pub fn build(&self, profile: &StudentProfile, target: &Question) -> Result<PromptText, PromptError> {
        self.bank.covers(profile)?;
        let student = profile.id.as_str();
        let mut parts = vec![self.template.render("intro", &[("student", student)])];
        let mut manifest = vec![PromptSegment::Intro];

        // BTreeSet iteration is already natural KC-id order.
        for kc in &profile.mastered {
            let (text, seg) = self.render_mastery_segment(student, kc)?;
            parts.push(text);
            manifest.push(seg);
        }
        let mut pairs: Vec<&ConfusionPair> = profile.confusions.iter().collect();
        pairs.sort();
        for pair in pairs {
            let (text, seg) = self.render_confusion_segment(student, pair)?;
            parts.push(text);
            manifest.push(seg);
        }

        let question = self.question_block(target);
        parts.push(
            self.template
                .render("target", &[("student", student), ("question", &question)]),
        );
        manifest.push(PromptSegment::Target {
            question: target.id.clone(),
        });

        let mut text = String::new();
        for (i, part) in parts.iter().enumerate() {
            if i > 0 {
                text.push_str("\n\n");
            }
            let _ = write!(text, "{part}");
        }
        text.push('\n');
        Ok(PromptText { text, manifest })
    }
}

/// [`PromptBuilder::build`] with the bundled template.
pub fn build_prompt(
    profile: &StudentProfile,
    bank: &ExemplarBank,
    universe: &KcUniverse,
    target: &Question,
) -> Result<PromptText, PromptError> {
    let template = PromptTemplate::default();
    PromptBuilder::new(universe, bank, &template).build(profile, target)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("exemplar bank has no mastery example for {0}")]
    MissingMastery(KcId),
    #[error("exemplar bank has no confusion examples for {0}")]
    MissingConfusion(PairKey),
    #[error("exemplar bank has no focused extras for {0}")]
    MissingFocused(PairKey),
    #[error("{what}: {reason}")]
    InvalidExemplar { what: String, reason: String },
    #[error("prompt template: {0}")]
    Template(String),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::knowledge::{KnowledgeComponent, QuestionOption};

    pub(crate) fn universe() -> KcUniverse {
        KcUniverse::new(
            (1..=10)
                .map(|i| KnowledgeComponent::new(format!("H{i}"), format!("Rule {i}")))
                .collect(),
        )
        .unwrap()
    }

    pub(crate) fn q(id: &str, tags: &[&str], correct: usize) -> Question {
        Question {
            id: id.into(),
            stem: format!("Stem of {id}"),
            options: tags
                .iter()
                .map(|t| QuestionOption {
                    text: format!("Rule {}", &t[1..]),
                    kc: KcId::from(*t),
                })
                .collect(),
            correct_index: correct,
        }
    }

    fn pk(a: &str, b: &str) -> PairKey {
        PairKey::new(a.into(), b.into())
    }

    /// A bank covering all ten KCs and the pairs {H3,H7}, {H5,H9}.
    pub(crate) fn bank() -> ExemplarBank {
        let mut bank = ExemplarBank::default();
        for i in 1..=10 {
            let kc = format!("H{i}");
            let other = format!("H{}", i % 10 + 1);
            bank.mastery.insert(
                KcId::new(kc.clone()),
                Exemplar {
                    question: q(&format!("M{i}"), &[&kc, &other], 0),
                    answer: 0,
                },
            );
        }
        for (a, b) in [("H3", "H7"), ("H5", "H9")] {
            bank.confusions.insert(
                pk(a, b),
                [
                    Exemplar {
                        question: q(&format!("C{a}"), &[a, b, "H1"], 0),
                        answer: 1,
                    },
                    Exemplar {
                        question: q(&format!("C{b}"), &[a, b, "H1"], 1),
                        answer: 0,
                    },
                ],
            );
            bank.focused_extras.insert(
                pk(a, b),
                [
                    Exemplar {
                        question: q(&format!("E{a}"), &[a, "H2"], 0),
                        answer: 0,
                    },
                    Exemplar {
                        question: q(&format!("E{b}"), &["H2", b], 1),
                        answer: 1,
                    },
                ],
            );
        }
        bank
    }

    fn ids(list: &[&str]) -> Vec<KcId> {
        list.iter().map(|s| KcId::from(*s)).collect()
    }

    fn gs1() -> StudentProfile {
        StudentProfile::new(
            "GS1",
            ids(&["H1", "H2", "H4", "H6", "H8"]),
            vec![ConfusionPair::new("H3", "H7").unwrap()],
        )
    }

    #[test]
    fn bundled_template_parses() {
        let t = PromptTemplate::default();
        assert_eq!(t.sections.len(), SECTIONS.len());
    }

    #[test]
    fn template_rejects_unknown_placeholder_and_missing_sections() {
        let bad = DEFAULT_TEMPLATE.replace("{{stem}}", "{{stemm}}");
        assert!(matches!(PromptTemplate::parse(&bad), Err(PromptError::Template(m)) if m.contains("stemm")));
        let missing = DEFAULT_TEMPLATE.replace("[[target]]", "[[targett]]");
        assert!(PromptTemplate::parse(&missing).is_err());
        assert!(PromptTemplate::parse("stray text\n").is_err());
    }

    #[test]
    fn bank_fixture_is_valid() {
        bank().validate(&universe()).unwrap();
    }

    #[test]
    fn bank_rejects_same_direction_mistakes() {
        let mut b = bank();
        let entry = b.confusions.get_mut(&pk("H3", "H7")).unwrap();
        entry[1] = entry[0].clone();
        let err = b.validate(&universe()).unwrap_err();
        assert!(err.to_string().contains("each direction"), "{err}");
    }

    #[test]
    fn bank_rejects_wrong_answer_not_partner() {
        let mut b = bank();
        b.confusions.get_mut(&pk("H3", "H7")).unwrap()[0].answer = 2;
        assert!(b.validate(&universe()).is_err());
    }

    #[test]
    fn gs1_manifest() {
        let prompt = build_prompt(&gs1(), &bank(), &universe(), &q("Q1", &["H1", "H3", "H7", "H9"], 0)).unwrap();
        let m = &prompt.manifest;
        assert_eq!(m.len(), 1 + 5 + 1 + 1);
        assert_eq!(m[0], PromptSegment::Intro);
        let mastery: Vec<_> = m
            .iter()
            .filter_map(|s| match s {
                PromptSegment::Mastery { kc } => Some(kc.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(mastery, ["H1", "H2", "H4", "H6", "H8"]);
        assert_eq!(
            m[6],
            PromptSegment::Confusion {
                pair: pk("H3", "H7"),
                focused: false,
                examples: 2
            }
        );
        assert_eq!(m[7], PromptSegment::Target { question: "Q1".into() });
        assert!(prompt.text.contains("teacher"));
        assert_eq!(prompt.text.matches("Stem of Q1").count(), 1);
        // Unknown KCs (H5, H9, H10) have no exemplar text in part 2.
        for unknown in ["M5", "M9", "M10"] {
            assert!(
                !prompt.text.contains(&format!("Stem of {unknown}\n")),
                "{unknown} leaked"
            );
        }
    }

    #[test]
    fn empty_profile_manifest() {
        let p = StudentProfile::new("E", [], vec![]);
        let prompt = build_prompt(&p, &bank(), &universe(), &q("Q1", &["H1", "H2"], 0)).unwrap();
        assert_eq!(
            prompt.manifest,
            vec![PromptSegment::Intro, PromptSegment::Target { question: "Q1".into() }]
        );
    }

    #[test]
    fn focused_confusion_has_four_examples() {
        let t = PromptTemplate::default();
        let (u, b) = (universe(), bank());
        let builder = PromptBuilder::new(&u, &b, &t);
        let pair = ConfusionPair::new("H3", "H7").unwrap().focused(true);
        let (text, seg) = builder.render_confusion_segment("GS21", &pair).unwrap();
        assert_eq!(
            seg,
            PromptSegment::Confusion {
                pair: pk("H3", "H7"),
                focused: true,
                examples: 4
            }
        );
        for id in ["CH3", "CH7", "EH3", "EH7"] {
            assert!(text.contains(&format!("Stem of {id}")), "{id} missing");
        }
        assert!(text.contains("easier"));
        let (plain, seg) = builder
            .render_confusion_segment("GS1", &ConfusionPair::new("H7", "H3").unwrap())
            .unwrap();
        assert_eq!(
            seg,
            PromptSegment::Confusion {
                pair: pk("H3", "H7"),
                focused: false,
                examples: 2
            }
        );
        assert!(plain.contains("incorrect") && !plain.contains("Stem of EH3"));
        // Each wrong example shows the partner rule as the student's pick.
        assert!(plain.contains("answer: B. Rule 7 (incorrect; the correct answer was A. Rule 3)"));
        assert!(plain.contains("answer: A. Rule 3 (incorrect; the correct answer was B. Rule 7)"));
    }

    #[test]
    fn missing_exemplars_are_named() {
        let t = PromptTemplate::default();
        let (u, b) = (universe(), bank());
        let builder = PromptBuilder::new(&u, &b, &t);
        let err = builder
            .render_confusion_segment("x", &ConfusionPair::new("H1", "H2").unwrap())
            .unwrap_err();
        assert_eq!(err, PromptError::MissingConfusion(pk("H1", "H2")));
        let mut partial = bank();
        partial.mastery.remove(&KcId::from("H4"));
        let builder = PromptBuilder::new(&u, &partial, &t);
        assert_eq!(
            builder.render_mastery_segment("x", &"H4".into()).unwrap_err(),
            PromptError::MissingMastery("H4".into())
        );
        assert!(matches!(
            builder.build(&gs1(), &q("Q1", &["H1", "H2"], 0)),
            Err(PromptError::MissingMastery(_))
        ));
    }

    #[test]
    fn mastery_segment_is_pure() {
        let t = PromptTemplate::default();
        let (u, b) = (universe(), bank());
        let builder = PromptBuilder::new(&u, &b, &t);
        let first = builder.render_mastery_segment("GS1", &"H1".into()).unwrap();
        let second = builder.render_mastery_segment("GS1", &"H1".into()).unwrap();
        assert_eq!(first, second);
        assert!(first.0.contains("Stem of M1") && first.0.contains("A. Rule 1 (correct)"));
    }

    #[test]
    fn target_option_letters_follow_question_order() {
        let target = q("Q9", &["H9", "H2", "H5", "H4"], 0);
        let prompt = build_prompt(&gs1(), &bank(), &universe(), &target).unwrap();
        let tail = prompt.text.rsplit("Stem of Q9").next().unwrap();
        let expected = "\nA. Rule 9\nB. Rule 2\nC. Rule 5\nD. Rule 4\n";
        assert!(tail.starts_with(expected), "{tail}");
        assert!(tail.contains("ANSWER: <letter>"));
    }

    #[test]
    fn bank_serde_round_trip() {
        let b = bank();
        let json = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<ExemplarBank>(&json).unwrap(), b);
        let broken = json.replacen("\"answer\":\"A\"", "\"answer\":\"AB\"", 1);
        assert!(serde_json::from_str::<ExemplarBank>(&broken).is_err());
    }
}

//! Knowledge components, student profiles and cohort generation.
//!
//! A student profile partitions the KC universe into three buckets:
//! mastered KCs, KCs that are members of a confusion pair, and unknown KCs
//! (everything else). The unknown bucket is always derived, never stored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable short identifier of a knowledge component, e.g. `H3`.
///
/// Ordering is "natural": runs of digits compare numerically, so `H2 < H10`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KcId(String);

impl KcId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for KcId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl fmt::Display for KcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Ord for KcId {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(&self.0, &other.0)
    }
}

impl PartialOrd for KcId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn natural_cmp(a: &str, b: &str) -> Ordering {
    let (mut ai, mut bi) = (a.char_indices().peekable(), b.char_indices().peekable());
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return a.cmp(b),
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some((sa, ca)), Some((sb, cb))) => {
                if ca.is_ascii_digit() && cb.is_ascii_digit() {
                    let ea = digits_end(a, sa);
                    let eb = digits_end(b, sb);
                    let (da, db) = (a[sa..ea].trim_start_matches('0'), b[sb..eb].trim_start_matches('0'));
                    let ord = da.len().cmp(&db.len()).then_with(|| da.cmp(db));
                    if ord != Ordering::Equal {
                        return ord;
                    }
                    while ai.peek().is_some_and(|&(i, _)| i < ea) {
                        ai.next();
                    }
                    while bi.peek().is_some_and(|&(i, _)| i < eb) {
                        bi.next();
                    }
                } else {
                    if ca != cb {
                        return ca.cmp(&cb);
                    }
                    ai.next();
                    bi.next();
                }
            }
        }
    }
}

fn digits_end(s: &str, start: usize) -> usize {
    s[start..]
        .find(|c: char| !c.is_ascii_digit())
        .map_or(s.len(), |off| start + off)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeComponent {
    pub id: KcId,
    pub label: String,
}

impl KnowledgeComponent {
    pub fn new(id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: KcId::new(id),
            label: label.into(),
        }
    }
}

/// The ordered set of KCs a quiz is built on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct KcUniverse {
    components: Vec<KnowledgeComponent>,
}

impl KcUniverse {
    pub fn new(components: Vec<KnowledgeComponent>) -> Result<Self, KnowledgeError> {
        let mut seen = BTreeSet::new();
        for kc in &components {
            if kc.id.as_str().trim().is_empty() {
                return Err(KnowledgeError::EmptyKcId);
            }
            if kc.label.trim().is_empty() {
                return Err(KnowledgeError::EmptyLabel(kc.id.clone()));
            }
            if !seen.insert(kc.id.clone()) {
                return Err(KnowledgeError::DuplicateKc(kc.id.clone()));
            }
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[KnowledgeComponent] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn contains(&self, id: &KcId) -> bool {
        self.components.iter().any(|kc| &kc.id == id)
    }

    pub fn get(&self, id: &KcId) -> Option<&KnowledgeComponent> {
        self.components.iter().find(|kc| &kc.id == id)
    }

    pub fn label(&self, id: &KcId) -> Option<&str> {
        self.get(id).map(|kc| kc.label.as_str())
    }

    pub fn ids(&self) -> impl Iterator<Item = &KcId> {
        self.components.iter().map(|kc| &kc.id)
    }
}

impl<'de> Deserialize<'de> for KcUniverse {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let components = Vec::<KnowledgeComponent>::deserialize(deserializer)?;
        KcUniverse::new(components).map_err(serde::de::Error::custom)
    }
}

/// Two KCs a student systematically mixes up.
///
/// The pair is unordered: `{a, b} == {b, a}`. Members are stored in natural
/// order so that equality, hashing and serialization are canonical.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawConfusionPair", into = "RawConfusionPair")]
pub struct ConfusionPair {
    kc_a: KcId,
    kc_b: KcId,
    focused: bool,
}

#[derive(Serialize, Deserialize)]
struct RawConfusionPair {
    pair: [KcId; 2],
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    focused: bool,
}

impl TryFrom<RawConfusionPair> for ConfusionPair {
    type Error = KnowledgeError;

    fn try_from(raw: RawConfusionPair) -> Result<Self, Self::Error> {
        let [a, b] = raw.pair;
        ConfusionPair::with_focus(a, b, raw.focused)
    }
}

impl From<ConfusionPair> for RawConfusionPair {
    fn from(p: ConfusionPair) -> Self {
        RawConfusionPair {
            pair: [p.kc_a, p.kc_b],
            focused: p.focused,
        }
    }
}

impl ConfusionPair {
    pub fn new(a: impl Into<KcId>, b: impl Into<KcId>) -> Result<Self, KnowledgeError> {
        Self::with_focus(a.into(), b.into(), false)
    }

    pub fn with_focus(a: KcId, b: KcId, focused: bool) -> Result<Self, KnowledgeError> {
        match a.cmp(&b) {
            Ordering::Equal => Err(KnowledgeError::DegeneratePair(a)),
            Ordering::Less => Ok(Self {
                kc_a: a,
                kc_b: b,
                focused,
            }),
            Ordering::Greater => Ok(Self {
                kc_a: b,
                kc_b: a,
                focused,
            }),
        }
    }

    pub fn focused(mut self, focused: bool) -> Self {
        self.focused = focused;
        self
    }

    pub fn kc_a(&self) -> &KcId {
        &self.kc_a
    }

    pub fn kc_b(&self) -> &KcId {
        &self.kc_b
    }

    pub fn is_focused(&self) -> bool {
        self.focused
    }

    pub fn members(&self) -> [&KcId; 2] {
        [&self.kc_a, &self.kc_b]
    }

    pub fn contains(&self, kc: &KcId) -> bool {
        &self.kc_a == kc || &self.kc_b == kc
    }

    /// The other member of the pair, if `kc` is a member.
    pub fn partner(&self, kc: &KcId) -> Option<&KcId> {
        if &self.kc_a == kc {
            Some(&self.kc_b)
        } else if &self.kc_b == kc {
            Some(&self.kc_a)
        } else {
            None
        }
    }

    /// Identity of the pair ignoring the focused flag.
    pub fn key(&self) -> PairKey {
        PairKey(self.kc_a.clone(), self.kc_b.clone())
    }

    pub fn overlaps(&self, other: &ConfusionPair) -> bool {
        self.contains(&other.kc_a) || self.contains(&other.kc_b)
    }
}

impl fmt::Display for ConfusionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.kc_a, self.kc_b)?;
        if self.focused {
            f.write_str(" (focused)")?;
        }
        Ok(())
    }
}

/// Unordered pair of KC ids, canonicalised, used as a map key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey(KcId, KcId);

impl PairKey {
    pub fn new(a: KcId, b: KcId) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }

    pub fn first(&self) -> &KcId {
        &self.0
    }

    pub fn second(&self) -> &KcId {
        &self.1
    }

    pub fn contains(&self, kc: &KcId) -> bool {
        &self.0 == kc || &self.1 == kc
    }

    pub fn partner(&self, kc: &KcId) -> Option<&KcId> {
        if &self.0 == kc {
            Some(&self.1)
        } else if &self.1 == kc {
            Some(&self.0)
        } else {
            None
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.0, self.1)
    }
}

impl Serialize for PairKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [&self.0, &self.1].serialize(s)
    }
}

impl<'de> Deserialize<'de> for PairKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [a, b] = <[KcId; 2]>::deserialize(d)?;
        if a == b {
            return Err(serde::de::Error::custom(KnowledgeError::DegeneratePair(a)));
        }
        Ok(PairKey::new(a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentProfile {
    pub id: String,
    pub mastered: BTreeSet<KcId>,
    #[serde(default)]
    pub confusions: Vec<ConfusionPair>,
    /// Optional explicit unknown list, checked against the derived set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown: Option<BTreeSet<KcId>>,
}

impl StudentProfile {
    pub fn new(
        id: impl Into<String>,
        mastered: impl IntoIterator<Item = KcId>,
        confusions: Vec<ConfusionPair>,
    ) -> Self {
        Self {
            id: id.into(),
            mastered: mastered.into_iter().collect(),
            confusions,
            unknown: None,
        }
    }

    pub fn confused_members(&self) -> BTreeSet<KcId> {
        self.confusions.iter().flat_map(|p| p.members()).cloned().collect()
    }

    /// KCs neither mastered nor part of a confusion pair, in universe order.
    pub fn unknown_in(&self, universe: &KcUniverse) -> Vec<KcId> {
        let confused = self.confused_members();
        universe
            .ids()
            .filter(|id| !self.mastered.contains(*id) && !confused.contains(*id))
            .cloned()
            .collect()
    }

    pub fn pair_containing(&self, kc: &KcId) -> Option<&ConfusionPair> {
        self.confusions.iter().find(|p| p.contains(kc))
    }

    pub fn status_of(&self, kc: &KcId) -> AnswerStatus {
        if self.mastered.contains(kc) {
            AnswerStatus::Mastered
        } else if self.pair_containing(kc).is_some() {
            AnswerStatus::Confused
        } else {
            AnswerStatus::Unknown
        }
    }

    pub fn is_confused_member(&self, kc: &KcId) -> bool {
        self.pair_containing(kc).is_some()
    }
}

/// The validated three-way split of a universe for one profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub mastered: BTreeSet<KcId>,
    pub confused: BTreeSet<KcId>,
    pub unknown: BTreeSet<KcId>,
}

pub fn validate_profile(profile: &StudentProfile, universe: &KcUniverse) -> Result<Partition, KnowledgeError> {
    for kc in &profile.mastered {
        if !universe.contains(kc) {
            return Err(KnowledgeError::UnknownKcId {
                profile: profile.id.clone(),
                kc: kc.clone(),
            });
        }
    }
    let mut confused = BTreeSet::new();
    for pair in &profile.confusions {
        for kc in pair.members() {
            if !universe.contains(kc) {
                return Err(KnowledgeError::UnknownKcId {
                    profile: profile.id.clone(),
                    kc: kc.clone(),
                });
            }
            if profile.mastered.contains(kc) {
                return Err(KnowledgeError::Overlap {
                    profile: profile.id.clone(),
                    kc: kc.clone(),
                    detail: "mastered and confused".into(),
                });
            }
            if !confused.insert(kc.clone()) {
                return Err(KnowledgeError::Overlap {
                    profile: profile.id.clone(),
                    kc: kc.clone(),
                    detail: "member of two confusion pairs".into(),
                });
            }
        }
    }
    let unknown: BTreeSet<KcId> = profile.unknown_in(universe).into_iter().collect();
    if let Some(declared) = &profile.unknown {
        if let Some(kc) = declared.iter().find(|kc| !universe.contains(kc)) {
            return Err(KnowledgeError::UnknownKcId {
                profile: profile.id.clone(),
                kc: kc.clone(),
            });
        }
        if let Some(kc) = declared.iter().find(|kc| !unknown.contains(*kc)) {
            return Err(KnowledgeError::Overlap {
                profile: profile.id.clone(),
                kc: kc.clone(),
                detail: "declared unknown but also mastered or confused".into(),
            });
        }
        if let Some(kc) = unknown.iter().find(|kc| !declared.contains(*kc)) {
            return Err(KnowledgeError::Coverage {
                profile: profile.id.clone(),
                kc: kc.clone(),
            });
        }
    }
    Ok(Partition {
        mastered: profile.mastered.clone(),
        confused,
        unknown,
    })
}

/// Letter label for an option position: 0 -> `A`.
pub fn option_letter(index: usize) -> char {
    assert!(index < 26, "at most 26 options are supported");
    (b'A' + index as u8) as char
}

/// Inverse of [`option_letter`], case-insensitive.
pub fn letter_index(letter: char) -> Option<usize> {
    let up = letter.to_ascii_uppercase();
    up.is_ascii_uppercase().then(|| (up as u8 - b'A') as usize)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub text: String,
    pub kc: KcId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub stem: String,
    pub options: Vec<QuestionOption>,
    pub correct_index: usize,
}

impl Question {
    pub fn validate(&self, universe: &KcUniverse) -> Result<(), KnowledgeError> {
        let invalid = |reason: String| KnowledgeError::InvalidQuestion {
            question: self.id.clone(),
            reason,
        };
        if self.options.len() < 2 {
            return Err(invalid(format!("{} option(s), need at least 2", self.options.len())));
        }
        if self.options.len() > 26 {
            return Err(invalid("more than 26 options".into()));
        }
        if self.correct_index >= self.options.len() {
            return Err(invalid(format!(
                "correct_index {} out of range for {} options",
                self.correct_index,
                self.options.len()
            )));
        }
        let mut tags = BTreeSet::new();
        for (i, opt) in self.options.iter().enumerate() {
            if !universe.contains(&opt.kc) {
                return Err(invalid(format!(
                    "option {} tagged with {} which is not in the KC universe",
                    option_letter(i),
                    opt.kc
                )));
            }
            if !tags.insert(&opt.kc) {
                return Err(invalid(format!(
                    "option {} repeats KC tag {}",
                    option_letter(i),
                    opt.kc
                )));
            }
        }
        Ok(())
    }

    pub fn correct_kc(&self) -> &KcId {
        &self.options[self.correct_index].kc
    }

    /// `(index, option)` for every wrong option.
    pub fn distractors(&self) -> impl Iterator<Item = (usize, &QuestionOption)> {
        self.options
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != self.correct_index)
    }

    pub fn index_of_kc(&self, kc: &KcId) -> Option<usize> {
        self.options.iter().position(|o| &o.kc == kc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerStatus {
    Mastered,
    Confused,
    Unknown,
}

impl AnswerStatus {
    pub const ALL: [AnswerStatus; 3] = [Self::Mastered, Self::Confused, Self::Unknown];
}

impl fmt::Display for AnswerStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mastered => "Mastered",
            Self::Confused => "Confused",
            Self::Unknown => "Unknown",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConditionTag {
    pub answer_status: AnswerStatus,
    pub confusion_in_distractors: bool,
}

/// Tag a (profile, question) pair with the status of its correct KC.
///
/// For a confused correct KC the flag tracks whether its partner is offered
/// as a distractor. Otherwise it tracks whether any confusion member is.
pub fn classify_condition(profile: &StudentProfile, question: &Question) -> ConditionTag {
    let correct = question.correct_kc();
    let answer_status = profile.status_of(correct);
    let confusion_in_distractors = match profile.pair_containing(correct) {
        Some(pair) if answer_status == AnswerStatus::Confused => {
            let partner = pair.partner(correct).expect("pair contains correct kc");
            question.distractors().any(|(_, o)| &o.kc == partner)
        }
        _ => question.distractors().any(|(_, o)| profile.is_confused_member(&o.kc)),
    };
    ConditionTag {
        answer_status,
        confusion_in_distractors,
    }
}

/// True when the correct KC is confused and its pair uses the focused variant.
pub fn focused_condition(profile: &StudentProfile, question: &Question) -> bool {
    profile
        .pair_containing(question.correct_kc())
        .is_some_and(ConfusionPair::is_focused)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortRow {
    pub n_mastered: usize,
    pub n_confused_kcs: usize,
    pub n_unknown: usize,
    #[serde(default)]
    pub focused: bool,
    pub n_students: usize,
}

impl CohortRow {
    pub fn new(n_mastered: usize, n_confused_kcs: usize, n_unknown: usize, focused: bool, n_students: usize) -> Self {
        Self {
            n_mastered,
            n_confused_kcs,
            n_unknown,
            focused,
            n_students,
        }
    }

    fn same_shape(&self, other: &CohortRow) -> bool {
        self.n_mastered == other.n_mastered
            && self.n_confused_kcs == other.n_confused_kcs
            && self.n_unknown == other.n_unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub rows: Vec<CohortRow>,
}

impl CohortSpec {
    pub fn total_students(&self) -> usize {
        self.rows.iter().map(|r| r.n_students).sum()
    }

    /// The 45-student distribution: 30 average, 10 struggling, 5 advanced.
    pub fn standard() -> Self {
        Self {
            rows: vec![
                CohortRow::new(5, 2, 3, false, 15),
                CohortRow::new(7, 2, 1, false, 15),
                CohortRow::new(5, 4, 1, false, 5),
                CohortRow::new(3, 4, 3, false, 5),
                CohortRow::new(5, 2, 3, true, 5),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingKind {
    /// Same mastered set, different confusion pairs.
    ConfusionVaried,
    /// Identical profile apart from the focused flag on its pairs.
    FocusedTwin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub first: String,
    pub second: String,
    pub kind: PairingKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedCohort {
    pub profiles: Vec<StudentProfile>,
    #[serde(default)]
    pub pairings: Vec<Pairing>,
}

/// Generate a seeded cohort following `spec`, row by row.
///
/// Within a row, students are emitted in matched pairs that share their
/// mastered set and differ in the confusion pairs. A focused row whose shape
/// matches an earlier non-focused row copies those profiles and flips the
/// focused flag, pairing each copy with its original. Students that cannot be
/// paired (odd remainder, or no admissible second confusion set) are drawn
/// independently.
pub fn generate_cohort(
    spec: &CohortSpec,
    universe: &KcUniverse,
    confusion_candidates: &[ConfusionPair],
    seed: u64,
) -> Result<GeneratedCohort, KnowledgeError> {
    let candidates = dedup_candidates(confusion_candidates, universe)?;
    for (i, row) in spec.rows.iter().enumerate() {
        check_row(i, row, universe, &candidates)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles: Vec<StudentProfile> = Vec::with_capacity(spec.total_students());
    let mut pairings = Vec::new();
    let mut row_ranges: Vec<std::ops::Range<usize>> = Vec::new();
    let next_id = |profiles: &Vec<StudentProfile>| format!("GS{}", profiles.len() + 1);

    for (row_idx, row) in spec.rows.iter().enumerate() {
        let start = profiles.len();
        let n_pairs = row.n_confused_kcs / 2;
        let sets = confusion_sets(&candidates, n_pairs);
        let mut remaining = row.n_students;

        if row.focused {
            let twins: Vec<usize> = spec.rows[..row_idx]
                .iter()
                .zip(&row_ranges)
                .filter(|(r, _)| !r.focused && r.same_shape(row))
                .flat_map(|(_, range)| range.clone())
                .collect();
            for original in twins.into_iter().take(remaining) {
                let src = profiles[original].clone();
                let id = next_id(&profiles);
                pairings.push(Pairing {
                    first: src.id.clone(),
                    second: id.clone(),
                    kind: PairingKind::FocusedTwin,
                });
                profiles.push(StudentProfile {
                    id,
                    confusions: src.confusions.into_iter().map(|p| p.focused(true)).collect(),
                    ..src
                });
                remaining -= 1;
            }
        }

        while remaining >= 2 {
            let first_set = sets.choose(&mut rng).expect("row checked satisfiable").clone();
            let first_members = members_of(&first_set);
            let room = universe.len() - row.n_mastered;
            let partners: Vec<&Vec<ConfusionPair>> = sets
                .iter()
                .filter(|s| **s != first_set)
                .filter(|s| first_members.union(&members_of(s)).count() <= room)
                .collect();
            let Some(second_set) = partners.choose(&mut rng).map(|s| (*s).clone()) else {
                break;
            };
            let excluded: BTreeSet<KcId> = first_members.union(&members_of(&second_set)).cloned().collect();
            let mastered = draw_mastered(universe, &excluded, row.n_mastered, &mut rng);
            let a = StudentProfile::new(next_id(&profiles), mastered.clone(), focus_all(first_set, row.focused));
            profiles.push(a);
            let b = StudentProfile::new(next_id(&profiles), mastered, focus_all(second_set, row.focused));
            profiles.push(b);
            let n = profiles.len();
            pairings.push(Pairing {
                first: profiles[n - 2].id.clone(),
                second: profiles[n - 1].id.clone(),
                kind: PairingKind::ConfusionVaried,
            });
            remaining -= 2;
        }

        for _ in 0..remaining {
            let set = sets.choose(&mut rng).expect("row checked satisfiable").clone();
            let mastered = draw_mastered(universe, &members_of(&set), row.n_mastered, &mut rng);
            profiles.push(StudentProfile::new(
                next_id(&profiles),
                mastered,
                focus_all(set, row.focused),
            ));
        }
        row_ranges.push(start..profiles.len());
    }

    Ok(GeneratedCohort { profiles, pairings })
}

fn dedup_candidates(candidates: &[ConfusionPair], universe: &KcUniverse) -> Result<Vec<ConfusionPair>, KnowledgeError> {
    let mut seen = BTreeMap::new();
    for c in candidates {
        for kc in c.members() {
            if !universe.contains(kc) {
                return Err(KnowledgeError::UnknownKcId {
                    profile: "<confusion candidates>".into(),
                    kc: kc.clone(),
                });
            }
        }
        seen.entry(c.key()).or_insert_with(|| c.clone().focused(false));
    }
    Ok(seen.into_values().collect())
}

fn check_row(
    index: usize,
    row: &CohortRow,
    universe: &KcUniverse,
    candidates: &[ConfusionPair],
) -> Result<(), KnowledgeError> {
    let unsat = |reason: String| KnowledgeError::UnsatisfiableRow { row: index, reason };
    if row.n_confused_kcs % 2 != 0 {
        return Err(unsat(format!("n_confused_kcs = {} is odd", row.n_confused_kcs)));
    }
    let total = row.n_mastered + row.n_confused_kcs + row.n_unknown;
    if total != universe.len() {
        return Err(unsat(format!(
            "counts sum to {total} but the universe has {} KCs",
            universe.len()
        )));
    }
    if row.focused && row.n_confused_kcs == 0 && row.n_students > 0 {
        return Err(unsat("focused row without confusion pairs".into()));
    }
    if row.n_students > 0 && confusion_sets(candidates, row.n_confused_kcs / 2).is_empty() {
        return Err(unsat(format!(
            "no {} pairwise-disjoint confusion pair(s) among {} candidate(s)",
            row.n_confused_kcs / 2,
            candidates.len()
        )));
    }
    Ok(())
}

/// Every combination of `k` pairwise-disjoint candidates, in a fixed order.
fn confusion_sets(candidates: &[ConfusionPair], k: usize) -> Vec<Vec<ConfusionPair>> {
    fn go(
        candidates: &[ConfusionPair],
        start: usize,
        k: usize,
        current: &mut Vec<ConfusionPair>,
        out: &mut Vec<Vec<ConfusionPair>>,
    ) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..candidates.len() {
            if current.iter().all(|p| !p.overlaps(&candidates[i])) {
                current.push(candidates[i].clone());
                go(candidates, i + 1, k, current, out);
                current.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(candidates, 0, k, &mut Vec::new(), &mut out);
    out
}

fn members_of(set: &[ConfusionPair]) -> BTreeSet<KcId> {
    set.iter().flat_map(|p| p.members()).cloned().collect()
}

fn focus_all(set: Vec<ConfusionPair>, focused: bool) -> Vec<ConfusionPair> {
    set.into_iter().map(|p| p.focused(focused)).collect()
}

fn draw_mastered(universe: &KcUniverse, excluded: &BTreeSet<KcId>, n: usize, rng: &mut ChaCha8Rng) -> Vec<KcId> {
    let pool: Vec<&KcId> = universe.ids().filter(|id| !excluded.contains(*id)).collect();
    debug_assert!(pool.len() >= n);
    pool.choose_multiple(rng, n).map(|id| (*id).clone()).collect()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KnowledgeError {
    #[error("knowledge component with empty id")]
    EmptyKcId,
    #[error("knowledge component {0} has an empty label")]
    EmptyLabel(KcId),
    #[error("duplicate knowledge component id {0}")]
    DuplicateKc(KcId),
    #[error("confusion pair needs two distinct KCs, got {0} twice")]
    DegeneratePair(KcId),
    #[error("profile {profile}: {kc} is {detail}")]
    Overlap { profile: String, kc: KcId, detail: String },
    #[error("profile {profile}: {kc} is not assigned to any bucket")]
    Coverage { profile: String, kc: KcId },
    #[error("profile {profile}: unknown KC id {kc}")]
    UnknownKcId { profile: String, kc: KcId },
    #[error("question {question}: {reason}")]
    InvalidQuestion { question: String, reason: String },
    #[error("cohort row {row} is unsatisfiable: {reason}")]
    UnsatisfiableRow { row: usize, reason: String },
}

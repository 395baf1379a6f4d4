//! Published aggregates and demo data shipped with the crate.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::experiment::{AggregateMeans, CrossoverDesign};
use crate::io::{parse_question_bank, QuestionBankFile};
use crate::psychometrics::CohortSummary;

pub const ITEM_MEANS_TOML: &str = include_str!("../data/item_means.toml");
pub const CROSSOVER_TOML: &str = include_str!("../data/crossover.toml");
/// A 10-heuristic, 20-question demo bank with exemplars and a cohort spec.
pub const DEMO_BANK_JSON: &str = include_str!("../data/demo_bank.json");

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FixtureCohort {
    pub name: String,
    pub means: Vec<f64>,
    pub alpha: f64,
    pub easy: Vec<String>,
    pub hard: Vec<String>,
    /// Question id to flagged option letters.
    #[serde(default)]
    pub distractors: BTreeMap<String, Vec<char>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ItemMeansFixture {
    pub questions: Vec<String>,
    #[serde(rename = "cohort")]
    pub cohorts: Vec<FixtureCohort>,
    pub pearson_with_real: BTreeMap<String, f64>,
}

impl ItemMeansFixture {
    pub fn cohort(&self, name: &str) -> Option<&FixtureCohort> {
        self.cohorts.iter().find(|c| c.name == name)
    }

    pub fn summary(&self, name: &str) -> Option<CohortSummary> {
        self.cohort(name).map(|c| CohortSummary {
            name: c.name.clone(),
            questions: self.questions.clone(),
            item_means: c.means.clone(),
            alpha: Some(c.alpha),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CrossoverFixture {
    #[serde(default)]
    pub reported_mean_improvement: Option<f64>,
    pub design: CrossoverDesign,
    #[serde(default)]
    pub aggregates: Option<AggregateMeans>,
}

pub fn item_means() -> ItemMeansFixture {
    toml::from_str(ITEM_MEANS_TOML).expect("bundled item-means fixture parses")
}

pub fn demo_bank() -> QuestionBankFile {
    parse_question_bank(DEMO_BANK_JSON, "demo bank").expect("bundled demo bank is valid")
}

/// Parse a crossover design document in the bundled fixture's format.
pub fn parse_crossover(text: &str) -> Result<CrossoverFixture, toml::de::Error> {
    toml::from_str(text)
}

pub fn crossover() -> CrossoverFixture {
    parse_crossover(CROSSOVER_TOML).expect("bundled crossover fixture parses")
}

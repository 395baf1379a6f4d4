use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::AnswerStatus;

pub const DEFAULT_CALIBRATION: &str = include_str!("../../data/default_calibration.toml");

/// Which simulator cell applies: the condition tag plus the focused flag.
/// `focused` is only meaningful for [`AnswerStatus::Confused`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CalibrationKey {
    pub status: AnswerStatus,
    pub confusion_in_distractors: bool,
    pub focused: bool,
}

impl CalibrationKey {
    pub fn new(status: AnswerStatus, confusion_in_distractors: bool, focused: bool) -> Self {
        Self {
            status,
            confusion_in_distractors,
            focused: focused && status == AnswerStatus::Confused,
        }
    }

    /// The eight cells every table must populate.
    pub fn all() -> Vec<CalibrationKey> {
        let mut keys = Vec::with_capacity(8);
        for status in AnswerStatus::ALL {
            for c in [false, true] {
                keys.push(CalibrationKey::new(status, c, false));
            }
        }
        for c in [false, true] {
            keys.push(CalibrationKey::new(AnswerStatus::Confused, c, true));
        }
        keys
    }
}

impl fmt::Display for CalibrationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{} / confusion in distractors: {}",
            self.status,
            if self.focused { " (focused)" } else { "" },
            if self.confusion_in_distractors { "yes" } else { "no" }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCell {
    pub p_correct: f64,
    /// Fraction of wrong answers that land on the confused rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_pick_confused_when_wrong: Option<f64>,
}

/// Condition-indexed probabilities driving the simulator backend.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    cells: BTreeMap<CalibrationKey, CalibrationCell>,
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    cell: Vec<CellEntry>,
}

#[derive(Serialize, Deserialize)]
struct CellEntry {
    status: AnswerStatus,
    confusion_in_distractors: bool,
    #[serde(default)]
    focused: bool,
    p_correct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_pick_confused_when_wrong: Option<f64>,
}

impl Default for CalibrationTable {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CALIBRATION).expect("bundled calibration is valid")
    }
}

impl CalibrationTable {
    pub fn new(cells: BTreeMap<CalibrationKey, CalibrationCell>) -> Result<Self, CalibrationError> {
        for key in CalibrationKey::all() {
            let cell = cells.get(&key).ok_or(CalibrationError::MissingCell(key))?;
            check_probability(key, "p_correct", cell.p_correct)?;
            match cell.p_pick_confused_when_wrong {
                Some(p) => check_probability(key, "p_pick_confused_when_wrong", p)?,
                None if key.confusion_in_distractors => {
                    return Err(CalibrationError::MissingPick(key));
                }
                None => {}
            }
        }
        if let Some(extra) = cells.keys().find(|k| k.focused && k.status != AnswerStatus::Confused) {
            return Err(CalibrationError::Invalid(format!(
                "focused cells exist only for Confused rows, got {extra}"
            )));
        }
        Ok(Self { cells })
    }

    pub fn from_toml(source: &str) -> Result<Self, CalibrationError> {
        let file: CalibrationFile = toml::from_str(source).map_err(|e| CalibrationError::Parse(e.to_string()))?;
        let mut cells = BTreeMap::new();
        for e in file.cell {
            if e.focused && e.status != AnswerStatus::Confused {
                return Err(CalibrationError::Invalid(format!(
                    "focused cells exist only for Confused rows, got {}",
                    e.status
                )));
            }
            let key = CalibrationKey::new(e.status, e.confusion_in_distractors, e.focused);
            let cell = CalibrationCell {
                p_correct: e.p_correct,
                p_pick_confused_when_wrong: e.p_pick_confused_when_wrong,
            };
            if cells.insert(key, cell).is_some() {
                return Err(CalibrationError::Invalid(format!("duplicate cell {key}")));
            }
        }
        Self::new(cells)
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let source =
            std::fs::read_to_string(path).map_err(|e| CalibrationError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_toml(&source)
    }

    pub fn to_toml(&self) -> String {
        let file = CalibrationFile {
            cell: self
                .cells
                .iter()
                .map(|(k, c)| CellEntry {
                    status: k.status,
                    confusion_in_distractors: k.confusion_in_distractors,
                    focused: k.focused,
                    p_correct: c.p_correct,
                    p_pick_confused_when_wrong: c.p_pick_confused_when_wrong,
                })
                .collect(),
        };
        toml::to_string(&file).expect("calibration serializes")
    }

    /// Cell for `key`; focused lookups for Mastered/Unknown fall back to the
    /// non-focused cell.
    pub fn cell(&self, key: CalibrationKey) -> &CalibrationCell {
        let key = CalibrationKey::new(key.status, key.confusion_in_distractors, key.focused);
        &self.cells[&key]
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CalibrationKey, &CalibrationCell)> {
        self.cells.iter()
    }

    /// Replace one cell, re-validating the table.
    pub fn with_cell(&self, key: CalibrationKey, cell: CalibrationCell) -> Result<Self, CalibrationError> {
        let mut cells = self.cells.clone();
        cells.insert(key, cell);
        Self::new(cells)
    }
}

fn check_probability(key: CalibrationKey, name: &str, p: f64) -> Result<(), CalibrationError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(CalibrationError::Invalid(format!(
            "{key}: {name} = {p} is outside [0, 1]"
        )))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("calibration file: {0}")]
    Parse(String),
    #[error("calibration table has no cell for {0}")]
    MissingCell(CalibrationKey),
    #[error("calibration cell {0} needs p_pick_confused_when_wrong")]
    MissingPick(CalibrationKey),
    #[error("calibration table: {0}")]
    Invalid(String),
}

//! Parsing of free-text model replies into an option index and a rationale.
//!
//! The prompt asks for `ANSWER: <letter>` then `RATIONALE: <text>`. Replies
//! that ignore the format fall back to the first standalone option letter.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::knowledge::{letter_index, option_letter};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("a question needs at least 2 options, got {0}")]
    TooFewOptions(usize),
    #[error("no option letter found in reply")]
    Unparseable,
    #[error("answer letter {letter} is out of range for {n_options} options")]
    OutOfRange { letter: char, n_options: usize },
}

/// The canonical reply for `(index, rationale)`.
pub fn format_reply(index: usize, rationale: &str) -> String {
    format!("ANSWER: {}\nRATIONALE: {}", option_letter(index), rationale)
}

static ANSWER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^[\s*#>_-]*answer\s*[*_]*\s*:[*_]*\s*(.*)$").unwrap());
static RATIONALE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)[*_]*rationale\s*[*_]*\s*:[*_]*").unwrap());

static FALLBACKS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        // (B) or [B]
        r"[\(\[]\s*([A-Za-z])\s*[\)\]]",
        // "option B", "answer is B", "picks C"
        r"\b(?i:option|choice|answer|pick|picks|choose|chooses|select|selects|letter)\s*(?i:is\s*)?:?\s*[\x22'*]*([A-Z])\b",
        // "B." or "B)" at a word boundary
        r"\b([A-Z])[\.\):]",
        // a bare capital letter
        r"\b([A-Z])\b",
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

/// Extract `(chosen_index, rationale)` from a reply to an `n_options` question.
pub fn parse_llm_reply(text: &str, n_options: usize) -> Result<(usize, String), ParseError> {
    if n_options < 2 {
        return Err(ParseError::TooFewOptions(n_options));
    }

    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if let Some(caps) = ANSWER_LINE.captures(content) {
            if let Some(letter) = leading_letter(caps.get(1).map_or("", |m| m.as_str())) {
                let index = letter_index(letter).expect("ascii letter");
                if index >= n_options {
                    return Err(ParseError::OutOfRange {
                        letter: letter.to_ascii_uppercase(),
                        n_options,
                    });
                }
                let rest = &text[offset + line.len()..];
                let rationale = match RATIONALE.find(rest) {
                    Some(m) => &rest[m.end()..],
                    None => rest,
                };
                return Ok((index, rationale.trim().to_string()));
            }
        }
        offset += line.len();
    }

    for pattern in FALLBACKS.iter() {
        for caps in pattern.captures_iter(text) {
            let letter = caps[1].chars().next().expect("one char group");
            let Some(index) = letter_index(letter) else { continue };
            if index >= n_options || is_false_letter(text, &caps) {
                continue;
            }
            return Ok((index, text.trim().to_string()));
        }
    }
    Err(ParseError::Unparseable)
}

/// First option letter in the text after `ANSWER:`, e.g. `B`, `(c)`, `**D**`.
fn leading_letter(s: &str) -> Option<char> {
    let s = s.trim_start_matches(|c: char| c.is_whitespace() || "*_([\"'`".contains(c));
    let s = s
        .strip_prefix("Option ")
        .or_else(|| s.strip_prefix("option "))
        .unwrap_or(s)
        .trim_start();
    let mut chars = s.chars();
    let first = chars.next()?;
    if !first.is_ascii_alphabetic() {
        return None;
    }
    match chars.next() {
        Some(c) if c.is_alphanumeric() => None,
        _ => Some(first),
    }
}

/// The pronoun `I` and the article `A` are not option letters.
fn is_false_letter(text: &str, caps: &regex::Captures<'_>) -> bool {
    let m = caps.get(1).expect("group");
    let after = &text[m.end()..];
    match m.as_str() {
        "I" => !after.starts_with([')', ']', '.']),
        "A" => {
            let mut rest = after.chars();
            rest.next() == Some(' ') && rest.next().is_some_and(|c| c.is_lowercase())
        }
        _ => false,
    }
}

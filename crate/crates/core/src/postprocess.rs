//! Cleanup of raw model generations.
//!
//! Three steps, always in this order:
//! 1. delete every `**<label>:**` heading followed by a blank line, repeating
//!    until none is left (a deletion can join two fragments into a new one),
//! 2. keep only the text after the first double quote, if there is one,
//! 3. trim surrounding whitespace.

use std::borrow::Cow;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// `.` is "any character except newline", non-greedy.
pub const PREFIX_PATTERN: &str = r"\*\*.*?:\*\*\n\n";

static PREFIX_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(PREFIX_PATTERN).expect("valid pattern"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CleanStep {
    PrefixStripped,
    QuoteCut,
    Trimmed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanResult {
    pub text: String,
    pub steps_applied: Vec<CleanStep>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOptions {
    /// Drop one trailing `"` left over after the quote cut.
    pub strip_trailing_quote: bool,
    /// Also treat U+201C/U+201D as quotation marks.
    pub curly_quotes: bool,
}

pub fn clean(raw: &str) -> CleanResult {
    clean_with(raw, CleanOptions::default())
}

pub fn clean_with(raw: &str, opts: CleanOptions) -> CleanResult {
    let mut steps = Vec::new();

    let mut stripped = Cow::Borrowed(raw);
    while PREFIX_RE.is_match(&stripped) {
        stripped = Cow::Owned(PREFIX_RE.replace_all(&stripped, "").into_owned());
    }
    if stripped.len() != raw.len() {
        steps.push(CleanStep::PrefixStripped);
    }

    let is_quote = |c: char| c == '"' || (opts.curly_quotes && matches!(c, '\u{201C}' | '\u{201D}'));
    let after_quote = match stripped.char_indices().find(|&(_, c)| is_quote(c)) {
        Some((i, c)) => {
            steps.push(CleanStep::QuoteCut);
            &stripped[i + c.len_utf8()..]
        }
        None => &stripped[..],
    };

    let mut text = after_quote.trim();
    if text.len() != after_quote.len() {
        steps.push(CleanStep::Trimmed);
    }
    if opts.strip_trailing_quote {
        if let Some(c) = text.chars().last().filter(|&c| is_quote(c)) {
            text = text[..text.len() - c.len_utf8()].trim_end();
        }
    }

    CleanResult {
        text: text.to_string(),
        steps_applied: steps,
    }
}

//! Rule-based answer scoring.
//!
//! A rollout is worth 1 when its extracted answer matches the gold label and
//! 0 otherwise. Extraction depends on the task kind:
//!
//! * `ExactMatch` — the final non-empty line, trimmed and case-folded.
//! * `Numeric` — the last number token, taken after a `####` marker when one
//!   is present, compared exactly as a rational (so `3.50` equals `7/2`).
//!   Scientific notation is out of scope for the supported datasets.
//! * `Choice` — the rightmost word-bounded occurrence of any configured
//!   label.
//!
//! Unparseable outputs score 0 rather than erroring; every rollout gets a
//! reward.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::pow::Pow;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Answer-extraction rules for a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskKind {
    ExactMatch,
    Numeric,
    Choice { labels: Vec<String> },
}

/// Marker that separates reasoning from the final answer in math-style outputs.
const NUMERIC_ANSWER_MARKER: &str = "####";

fn casefold(s: &str) -> String {
    s.trim().to_lowercase()
}

fn last_nonempty_line(text: &str) -> Option<&str> {
    text.lines().rev().map(str::trim).find(|l| !l.is_empty())
}

/// Parses a decimal number token (digits with optional sign, thousands
/// commas, and fraction part) into an exact rational.
fn parse_rational(token: &str) -> Option<BigRational> {
    let cleaned: String = token.chars().filter(|&c| c != ',').collect();
    let (sign, body) = match cleaned.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, cleaned.strip_prefix('+').unwrap_or(&cleaned)),
    };
    if body.is_empty() {
        return None;
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let numerator: BigInt = digits.parse().ok()?;
    let denominator = BigInt::from(10).pow(frac_part.len() as u32);
    Some(BigRational::new(numerator * BigInt::from(sign), denominator))
}

/// Extracts the last number token from `text`.
fn last_number(text: &str) -> Option<BigRational> {
    let search = match text.rfind(NUMERIC_ANSWER_MARKER) {
        Some(pos) => &text[pos + NUMERIC_ANSWER_MARKER.len()..],
        None => text,
    };
    let bytes = search.as_bytes();
    let mut best: Option<BigRational> = None;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let mut start = i;
            // attach a sign when it does not follow another number or word
            if start > 0 && (bytes[start - 1] == b'-' || bytes[start - 1] == b'+') {
                let before = if start >= 2 { bytes[start - 2] } else { b' ' };
                if !before.is_ascii_alphanumeric() && before != b'.' {
                    start -= 1;
                }
            }
            let mut end = i;
            while end < bytes.len()
                && (bytes[end].is_ascii_digit()
                    || (bytes[end] == b',' && end + 1 < bytes.len() && bytes[end + 1].is_ascii_digit())
                    || (bytes[end] == b'.' && end + 1 < bytes.len() && bytes[end + 1].is_ascii_digit()))
            {
                end += 1;
            }
            if let Some(r) = parse_rational(&search[start..end]) {
                best = Some(r);
            }
            i = end;
        } else {
            i += 1;
        }
    }
    best
}

/// Rightmost word-bounded occurrence of any configured choice label.
fn last_choice(text: &str, labels: &[String]) -> Option<String> {
    let haystack = text.to_lowercase();
    let bytes = haystack.as_bytes();
    let mut best: Option<(usize, String)> = None;
    for label in labels {
        let needle = casefold(label);
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(rel) = haystack[from..].find(&needle) {
            let start = from + rel;
            let end = start + needle.len();
            let left_ok = start == 0 || !bytes[start - 1].is_ascii_alphanumeric();
            let right_ok = end == bytes.len() || !bytes[end].is_ascii_alphanumeric();
            if left_ok && right_ok && best.as_ref().is_none_or(|(s, _)| start >= *s) {
                best = Some((start, needle.clone()));
            }
            from = start + 1;
        }
    }
    best.map(|(_, l)| l)
}

/// Canonical form of the answer extracted from `text`, or `None` when no
/// answer can be extracted. Two outputs agree (for consistency purposes)
/// exactly when their canonical forms are equal.
pub fn canonicalize_answer(text: &str, kind: &TaskKind) -> Option<String> {
    match kind {
        TaskKind::ExactMatch => last_nonempty_line(text).map(casefold),
        TaskKind::Numeric => last_number(text).map(|r| r.to_string()),
        TaskKind::Choice { labels } => last_choice(text, labels),
    }
}

/// Canonicalizes to a plain string, mapping "no answer" to the empty string.
///
/// A non-empty label never canonicalizes to the empty string, so substituted
/// empty outputs can never count as correct.
pub fn canonicalize_or_empty(text: &str, kind: &TaskKind) -> String {
    canonicalize_answer(text, kind).unwrap_or_default()
}

/// Scores one output against the gold label: 1 on a match, else 0.
pub fn score_answer<R: Real>(output_text: &str, label: &str, kind: &TaskKind) -> R {
    debug_assert!(!label.is_empty(), "labels must be non-empty");
    let gold = match kind {
        // the label is the answer itself, not a transcript to extract from
        TaskKind::ExactMatch => Some(casefold(label)),
        TaskKind::Numeric => parse_rational(label.trim())
            .or_else(|| last_number(label))
            .map(|r| r.to_string()),
        TaskKind::Choice { .. } => canonicalize_answer(label, kind),
    };
    match (canonicalize_answer(output_text, kind), gold) {
        (Some(a), Some(b)) if a == b => R::one(),
        _ => R::zero(),
    }
}

/// Rewards for a batch: M groups by N variants, entries in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix<R> {
    values: Vec<Vec<R>>,
    group_ids: Vec<String>,
}

impl<R: Real> RewardMatrix<R> {
    /// Validates rectangularity, non-emptiness, and the [0,1] range.
    pub fn new(values: Vec<Vec<R>>, group_ids: Vec<String>) -> Result<Self> {
        if values.is_empty() || values[0].is_empty() {
            return Err(Error::Shape("reward matrix must be at least 1x1".into()));
        }
        if group_ids.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} group ids for {} reward rows",
                group_ids.len(),
                values.len()
            )));
        }
        let n = values[0].len();
        for (j, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "row {j} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                if v.is_nan() || v < R::zero() || v > R::one() {
                    return Err(Error::Domain(format!(
                        "reward ({j},{i}) = {v} outside [0,1]"
                    )));
                }
            }
        }
        Ok(Self { values, group_ids })
    }

    pub fn n_groups(&self) -> usize {
        self.values.len()
    }

    pub fn n_variants(&self) -> usize {
        self.values[0].len()
    }

    pub fn rows(&self) -> &[Vec<R>] {
        &self.values
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn get(&self, group: usize, variant: usize) -> R {
        self.values[group][variant]
    }
}

/// Scores an M x N grid of outputs elementwise against per-group labels.
pub fn build_reward_matrix<R: Real>(
    outputs: &[Vec<String>],
    labels: &[String],
    group_ids: &[String],
    kind: &TaskKind,
) -> Result<RewardMatrix<R>> {
    if outputs.is_empty() || outputs[0].is_empty() {
        return Err(Error::Shape("output grid must be at least 1x1".into()));
    }
    if labels.len() != outputs.len() {
        return Err(Error::Shape(format!(
            "{} labels for {} output rows",
            labels.len(),
            outputs.len()
        )));
    }
    let n = outputs[0].len();
    let mut values = Vec::with_capacity(outputs.len());
    for (j, row) in outputs.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Shape(format!(
                "output row {j} has {} entries, expected {n}",
                row.len()
            )));
        }
        values.push(
            row.iter()
                .map(|out| score_answer::<R>(out, &labels[j], kind))
                .collect(),
        );
    }
    RewardMatrix::new(values, group_ids.to_vec())
}

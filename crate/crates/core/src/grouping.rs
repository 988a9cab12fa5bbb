//! Permutation-variant query groups.
//!
//! A query is a set of prompt elements plus a question; its order variants
//! are the same elements rendered under different permutations. This module
//! builds variant groups deterministically from a seed, renders individual
//! variants, and reads/writes the line-delimited JSON dataset formats.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator used between elements and before the question unless overridden.
pub const DEFAULT_SEPARATOR: &str = "\n";

/// Random-shuffle attempts per requested variant before falling back to
/// systematic enumeration of unseen permutations.
const SHUFFLE_ATTEMPTS_PER_VARIANT: usize = 32;

/// One unordered context element (a prompt, document, or QA pair).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptElement {
    pub element_id: String,
    pub text: String,
}

/// One original query together with its order variants.
///
/// `permutations[0]` is always the identity, so variant 0 reproduces the
/// original arrangement. When `n! >= permutations.len()` all permutations are
/// pairwise distinct; otherwise the distinct ones are exhausted first and the
/// remainder is sampled with replacement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryGroup {
    pub group_id: String,
    pub elements: Vec<PromptElement>,
    pub question: String,
    pub label: String,
    pub permutations: Vec<Vec<usize>>,
    pub seed: u64,
}

/// A single rendered order variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedQuery {
    pub group_id: String,
    pub variant_index: usize,
    pub rendered_text: String,
}

impl QueryGroup {
    /// Number of order variants.
    pub fn n_variants(&self) -> usize {
        self.permutations.len()
    }

    /// Number of context elements.
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Checks every structural invariant, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.elements.len();
        if n == 0 {
            return Err(Error::InvalidInput("group has no elements".into()));
        }
        if self.permutations.is_empty() {
            return Err(Error::InvalidInput("group has no permutations".into()));
        }
        let mut ids = HashSet::new();
        for el in &self.elements {
            if el.text.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "element {} has empty text",
                    el.element_id
                )));
            }
            if !ids.insert(el.element_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate element_id {}",
                    el.element_id
                )));
            }
        }
        for (i, p) in self.permutations.iter().enumerate() {
            if !is_permutation(p, n) {
                return Err(Error::InvalidInput(format!(
                    "variant {i} is not a permutation of 0..{n}"
                )));
            }
        }
        if self.permutations[0] != identity(n) {
            return Err(Error::InvalidInput(
                "variant 0 must be the identity order".into(),
            ));
        }
        if let Some(nf) = factorial_checked(n) {
            if nf >= self.permutations.len() {
                let distinct: HashSet<&Vec<usize>> = self.permutations.iter().collect();
                if distinct.len() != self.permutations.len() {
                    return Err(Error::InvalidInput(
                        "permutations must be pairwise distinct when n! >= N".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn identity(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    for &i in p {
        if i >= n || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

/// `n!` if it fits in a `usize`.
fn factorial_checked(n: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for k in 2..=n {
        acc = acc.checked_mul(k)?;
    }
    Some(acc)
}

/// Advances `p` to its lexicographic successor; wraps to identity at the end.
fn next_permutation(p: &mut [usize]) {
    let n = p.len();
    if n < 2 {
        return;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        p.sort_unstable();
        return;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
}

/// Builds the order-variant group for one query.
///
/// Variant 0 keeps the original order. Further variants are seeded uniform
/// shuffles, kept distinct by rejection while distinct permutations remain;
/// if rejection stalls, the missing ones are taken by systematic enumeration.
/// Once all `n!` permutations are present, the remainder (only possible when
/// `n! < n_variants`) is sampled with replacement.
pub fn build_variants(
    group_id: impl Into<String>,
    elements: Vec<PromptElement>,
    question: impl Into<String>,
    label: impl Into<String>,
    n_variants: usize,
    seed: u64,
) -> Result<QueryGroup> {
    if elements.is_empty() {
        return Err(Error::InvalidInput(
            "cannot build variants from an empty element collection".into(),
        ));
    }
    if n_variants == 0 {
        return Err(Error::InvalidInput("n_variants must be at least 1".into()));
    }
    let n = elements.len();
    let n_fact = factorial_checked(n);
    let distinct_target = match n_fact {
        Some(nf) => nf.min(n_variants),
        None => n_variants, // n! exceeds usize; rejection cannot realistically stall
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms: Vec<Vec<usize>> = vec![identity(n)];
    let mut seen: HashSet<Vec<usize>> = perms.iter().cloned().collect();

    let attempt_budget = SHUFFLE_ATTEMPTS_PER_VARIANT.saturating_mul(n_variants);
    let mut attempts = 0;
    let mut candidate = identity(n);
    while perms.len() < distinct_target && attempts < attempt_budget {
        candidate.shuffle(&mut rng);
        attempts += 1;
        if seen.insert(candidate.clone()) {
            perms.push(candidate.clone());
        }
    }

    if perms.len() < distinct_target {
        // Enumerate successors of the identity; each visited permutation is
        // either already present or taken, so this terminates after at most
        // |seen| + missing steps.
        let mut cursor = identity(n);
        while perms.len() < distinct_target {
            next_permutation(&mut cursor);
            if seen.insert(cursor.clone()) {
                perms.push(cursor.clone());
            }
        }
    }

    while perms.len() < n_variants {
        candidate.shuffle(&mut rng);
        perms.push(candidate.clone());
    }

    let group = QueryGroup {
        group_id: group_id.into(),
        elements,
        question: question.into(),
        label: label.into(),
        permutations: perms,
        seed,
    };
    group.validate()?;
    Ok(group)
}

/// Renders one variant: element texts in permuted order joined by
/// `separator`, then the question.
pub fn render_query(group: &QueryGroup, variant_index: usize, separator: &str) -> Result<OrderedQuery> {
    let perm = group.permutations.get(variant_index).ok_or_else(|| {
        Error::Index(format!(
            "variant {variant_index} requested but group {} has {} variants",
            group.group_id,
            group.n_variants()
        ))
    })?;
    let mut parts: Vec<&str> = perm.iter().map(|&i| group.elements[i].text.as_str()).collect();
    parts.push(group.question.as_str());
    Ok(OrderedQuery {
        group_id: group.group_id.clone(),
        variant_index,
        rendered_text: parts.join(separator),
    })
}

/// One record of the raw dataset format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSample {
    pub group_id: Option<String>,
    pub elements: Vec<String>,
    pub question: String,
    pub label: String,
}

fn schema_err(line: usize, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        message: message.into(),
    }
}

fn parse_raw_record(line_no: usize, value: &serde_json::Value) -> Result<RawSample> {
    let obj = value
        .as_object()
        .ok_or_else(|| schema_err(line_no, "record is not a JSON object"))?;
    let group_id = match obj.get("group_id") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema_err(line_no, "field \"group_id\" must be a string")),
    };
    let elements_val = obj
        .get("elements")
        .ok_or_else(|| schema_err(line_no, "missing required field \"elements\""))?;
    let arr = elements_val
        .as_array()
        .ok_or_else(|| schema_err(line_no, "field \"elements\" must be an array of strings"))?;
    if arr.is_empty() {
        return Err(schema_err(line_no, "field \"elements\" must be non-empty"));
    }
    let mut elements = Vec::with_capacity(arr.len());
    for (i, e) in arr.iter().enumerate() {
        let s = e.as_str().ok_or_else(|| {
            schema_err(line_no, format!("elements[{i}] must be a string"))
        })?;
        elements.push(s.to_string());
    }
    let question = obj
        .get("question")
        .and_then(|v| v.as_str())
        .ok_or_else(|| schema_err(line_no, "missing required string field \"question\""))?
        .to_string();
    let label = obj
        .get("label")
        .and_then(|v| v.as_str())
        .ok_or_else(|| schema_err(line_no, "missing required string field \"label\""))?
        .to_string();
    Ok(RawSample {
        group_id,
        elements,
        question,
        label,
    })
}

/// Loads the raw dataset: one JSON object per line with fields `group_id`
/// (optional), `elements`, `question`, `label`. Input order is preserved;
/// blank lines are skipped.
pub fn load_dataset(path: &Path) -> Result<Vec<RawSample>> {
    let file = File::open(path)?;
    read_dataset(BufReader::new(file))
}

/// Same as [`load_dataset`] but from any reader.
pub fn read_dataset<Rd: Read>(reader: BufReader<Rd>) -> Result<Vec<RawSample>> {
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        samples.push(parse_raw_record(line_no, &value)?);
    }
    Ok(samples)
}

#[derive(Debug, Serialize, Deserialize)]
struct AugmentedRecord {
    group_id: String,
    elements: Vec<String>,
    question: String,
    label: String,
    variant_index: usize,
    permutation: Vec<usize>,
}

/// Writes groups in the augmented format: one line per variant, carrying the
/// original elements plus `variant_index` and `permutation`.
pub fn write_augmented<W: Write>(mut writer: W, groups: &[QueryGroup]) -> Result<()> {
    for group in groups {
        for (variant_index, permutation) in group.permutations.iter().enumerate() {
            let record = AugmentedRecord {
                group_id: group.group_id.clone(),
                elements: group.elements.iter().map(|e| e.text.clone()).collect(),
                question: group.question.clone(),
                label: group.label.clone(),
                variant_index,
                permutation: permutation.clone(),
            };
            let line = serde_json::to_string(&record)
                .map_err(|e| Error::InvalidInput(format!("serialize augmented record: {e}")))?;
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Reads groups back from the augmented format.
///
/// Lines sharing a `group_id` must agree on elements, question, and label,
/// and their variant indices must cover `0..N` exactly once. Element ids are
/// regenerated positionally; the original seed is not part of the format and
/// is restored as 0.
pub fn load_augmented(path: &Path) -> Result<Vec<QueryGroup>> {
    let file = File::open(path)?;
    read_augmented(BufReader::new(file))
}

/// Same as [`load_augmented`] but from any reader.
pub fn read_augmented<Rd: Read>(reader: BufReader<Rd>) -> Result<Vec<QueryGroup>> {
    let mut order: Vec<String> = Vec::new();
    let mut partial: std::collections::HashMap<String, Vec<(usize, AugmentedRecord)>> =
        std::collections::HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: AugmentedRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !partial.contains_key(&record.group_id) {
            order.push(record.group_id.clone());
        }
        partial
            .entry(record.group_id.clone())
            .or_default()
            .push((line_no, record));
    }

    let mut groups = Vec::with_capacity(order.len());
    for gid in order {
        let mut records = partial.remove(&gid).expect("group recorded in order list");
        records.sort_by_key(|(_, r)| r.variant_index);
        let (first_line, first) = &records[0];
        for (k, (line_no, r)) in records.iter().enumerate() {
            if r.variant_index != k {
                return Err(schema_err(
                    *line_no,
                    format!("group {gid}: variant indices must cover 0..N exactly once"),
                ));
            }
            if r.elements != first.elements || r.question != first.question || r.label != first.label
            {
                return Err(schema_err(
                    *line_no,
                    format!("group {gid}: variants disagree on elements/question/label"),
                ));
            }
        }
        let elements = first
            .elements
            .iter()
            .enumerate()
            .map(|(i, text)| PromptElement {
                element_id: format!("{gid}/e{i}"),
                text: text.clone(),
            })
            .collect();
        let group = QueryGroup {
            group_id: gid.clone(),
            elements,
            question: first.question.clone(),
            label: first.label.clone(),
            permutations: records.iter().map(|(_, r)| r.permutation.clone()).collect(),
            seed: 0,
        };
        group.validate().map_err(|e| schema_err(*first_line, e.to_string()))?;
        groups.push(group);
    }
    Ok(groups)
}

/// Convenience constructor used by tests and the toy task.
pub fn elements_from_texts(texts: &[&str]) -> Vec<PromptElement> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| PromptElement {
            element_id: format!("e{i}"),
            text: (*t).to_string(),
        })
        .collect()
}

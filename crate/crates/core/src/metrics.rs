//! Order-stability metric suite.
//!
//! Over M groups of N canonicalized answers each:
//!
//! * **Accuracy** — fraction of all M*N answers equal to their group's label.
//! * **Consistency Rate (CR)** — mean over groups of the modal answer's
//!   frequency; 1.0 means perfectly order-stable, and 1/N is the floor.
//! * **Overconfidence Rate (OR)** — mean over groups of the most frequent
//!   *wrong* answer's frequency, 0 for a group whose answers are all correct.
//!   High OR with high CR is stable-but-wrong behavior.
//!
//! Only counts enter the maxima, so ties between equally frequent answers
//! need no tie-breaking. Values stay in [0,1] here; report rendering scales
//! them by 100.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Canonicalized answers of one group's N variants plus its gold label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupOutputs {
    pub group_id: String,
    pub outputs: Vec<String>,
    pub label: String,
}

impl GroupOutputs {
    pub fn new(
        group_id: impl Into<String>,
        outputs: Vec<String>,
        label: impl Into<String>,
    ) -> Self {
        Self {
            group_id: group_id.into(),
            outputs,
            label: label.into(),
        }
    }
}

/// Per-group pieces of the aggregate metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBreakdown<R> {
    pub group_id: String,
    pub accuracy: R,
    pub max_consistency: R,
    pub max_wrong_consistency: R,
}

/// Aggregate metrics with per-group breakdowns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport<R> {
    pub accuracy: R,
    pub consistency_rate: R,
    pub overconfidence_rate: R,
    pub per_group: Vec<GroupBreakdown<R>>,
    pub m_groups: usize,
    pub n_variants: usize,
}

fn check_groups(groups: &[GroupOutputs]) -> Result<usize> {
    let first = groups
        .first()
        .ok_or_else(|| Error::Shape("metrics need at least one group".into()))?;
    let n = first.outputs.len();
    if n == 0 {
        return Err(Error::Shape("groups must have at least one output".into()));
    }
    for g in groups {
        if g.outputs.len() != n {
            return Err(Error::Shape(format!(
                "group {} has {} outputs, expected {n}",
                g.group_id,
                g.outputs.len()
            )));
        }
    }
    Ok(n)
}

fn group_stats<R: Real>(g: &GroupOutputs) -> (R, R, R) {
    let n = R::of_usize(g.outputs.len());
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for out in &g.outputs {
        *counts.entry(out.as_str()).or_insert(0) += 1;
    }
    let correct = counts.get(g.label.as_str()).copied().unwrap_or(0);
    let mode = counts.values().copied().max().unwrap_or(0);
    let wrong_mode = counts
        .iter()
        .filter(|(answer, _)| **answer != g.label.as_str())
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    (
        R::of_usize(correct) / n,
        R::of_usize(mode) / n,
        R::of_usize(wrong_mode) / n,
    )
}

/// Mean per-variant accuracy over all groups.
pub fn accuracy<R: Real>(groups: &[GroupOutputs]) -> Result<R> {
    check_groups(groups)?;
    let sum: R = groups.iter().map(|g| group_stats::<R>(g).0).sum();
    Ok(sum / R::of_usize(groups.len()))
}

/// Mean modal-answer frequency over all groups.
pub fn consistency_rate<R: Real>(groups: &[GroupOutputs]) -> Result<R> {
    check_groups(groups)?;
    let sum: R = groups.iter().map(|g| group_stats::<R>(g).1).sum();
    Ok(sum / R::of_usize(groups.len()))
}

/// Mean modal-wrong-answer frequency over all groups.
pub fn overconfidence_rate<R: Real>(groups: &[GroupOutputs]) -> Result<R> {
    check_groups(groups)?;
    let sum: R = groups.iter().map(|g| group_stats::<R>(g).2).sum();
    Ok(sum / R::of_usize(groups.len()))
}

/// All three metrics plus per-group breakdowns in one pass.
pub fn compute_report<R: Real>(groups: &[GroupOutputs]) -> Result<MetricsReport<R>> {
    let n = check_groups(groups)?;
    let m = R::of_usize(groups.len());
    let mut acc = R::zero();
    let mut cr = R::zero();
    let mut or = R::zero();
    let mut per_group = Vec::with_capacity(groups.len());
    for g in groups {
        let (a, c, w) = group_stats::<R>(g);
        acc += a;
        cr += c;
        or += w;
        per_group.push(GroupBreakdown {
            group_id: g.group_id.clone(),
            accuracy: a,
            max_consistency: c,
            max_wrong_consistency: w,
        });
    }
    Ok(MetricsReport {
        accuracy: acc / m,
        consistency_rate: cr / m,
        overconfidence_rate: or / m,
        per_group,
        m_groups: groups.len(),
        n_variants: n,
    })
}

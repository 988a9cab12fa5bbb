//! Report rendering.
//!
//! The text table shows metrics as percentages (two decimals) with signed
//! parenthesized deltas against a baseline, e.g. `56.31 (-2.45)`. The CSV
//! keeps raw [0,1] values at full precision so that parsing an emitted file
//! reproduces the rows exactly; delta columns are filled only when a
//! baseline was supplied. Plot series are plain `x,y` CSV.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::scalar::Real;

/// One line of a comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub accuracy: f64,
    pub consistency_rate: f64,
    pub overconfidence_rate: f64,
}

impl ReportRow {
    pub fn from_report<R: Real>(
        dataset: impl Into<String>,
        method: impl Into<String>,
        report: &MetricsReport<R>,
    ) -> Self {
        Self {
            dataset: dataset.into(),
            method: method.into(),
            accuracy: report.accuracy.to_f64().unwrap_or(f64::NAN),
            consistency_rate: report.consistency_rate.to_f64().unwrap_or(f64::NAN),
            overconfidence_rate: report.overconfidence_rate.to_f64().unwrap_or(f64::NAN),
        }
    }
}

pub const CSV_HEADER: &str =
    "dataset,method,accuracy,consistency_rate,overconfidence_rate,delta_accuracy,delta_consistency_rate,delta_overconfidence_rate";

fn baseline_for<'a>(row: &ReportRow, baseline: &'a [ReportRow]) -> Option<&'a ReportRow> {
    baseline
        .iter()
        .find(|b| b.dataset == row.dataset)
        .or_else(|| baseline.first())
}

/// Formats a [0,1] value as a percentage with two decimals.
fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Signed percentage delta, `(+1.23)` / `(-2.45)` style.
fn pct_delta(v: f64, b: f64) -> String {
    format!("({:+.2})", (v - b) * 100.0)
}

/// Renders the human-readable table.
pub fn render_text(rows: &[ReportRow], baseline: &[ReportRow]) -> String {
    let mut cells: Vec<[String; 5]> = Vec::with_capacity(rows.len() + 1);
    cells.push([
        "dataset".into(),
        "method".into(),
        "accuracy".into(),
        "consistency_rate".into(),
        "overconfidence_rate".into(),
    ]);
    for row in rows {
        let fmt = |v: f64, b: Option<f64>| match b {
            Some(b) => format!("{} {}", pct(v), pct_delta(v, b)),
            None => pct(v),
        };
        let base = baseline_for(row, baseline);
        cells.push([
            row.dataset.clone(),
            row.method.clone(),
            fmt(row.accuracy, base.map(|b| b.accuracy)),
            fmt(row.consistency_rate, base.map(|b| b.consistency_rate)),
            fmt(row.overconfidence_rate, base.map(|b| b.overconfidence_rate)),
        ]);
    }
    let mut widths = [0usize; 5];
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in &cells {
        let mut line = String::new();
        for (w, cell) in widths.iter().zip(row) {
            let _ = write!(line, "{cell:<w$}  ");
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Emits the machine-readable CSV. Raw values are written with `f64`'s
/// shortest round-trip formatting.
pub fn to_csv(rows: &[ReportRow], baseline: &[ReportRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in rows {
        let base = baseline_for(row, baseline);
        let delta = |v: f64, b: Option<f64>| match b {
            Some(b) => format!("{}", v - b),
            None => String::new(),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.dataset,
            row.method,
            row.accuracy,
            row.consistency_rate,
            row.overconfidence_rate,
            delta(row.accuracy, base.map(|b| b.accuracy)),
            delta(row.consistency_rate, base.map(|b| b.consistency_rate)),
            delta(row.overconfidence_rate, base.map(|b| b.overconfidence_rate)),
        );
    }
    out
}

/// Parses a CSV produced by [`to_csv`], ignoring the delta columns.
pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected report header: {header}"),
            })
        }
        None => return Err(Error::Parse {
            line: 1,
            message: "empty report file".into(),
        }),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("expected 8 fields, found {}", fields.len()),
            });
        }
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse {
                line: idx + 1,
                message: format!("bad number {s:?}: {e}"),
            })
        };
        rows.push(ReportRow {
            dataset: fields[0].to_string(),
            method: fields[1].to_string(),
            accuracy: num(fields[2])?,
            consistency_rate: num(fields[3])?,
            overconfidence_rate: num(fields[4])?,
        });
    }
    Ok(rows)
}

/// A named series of (x, y) points for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in &self.points {
            let _ = writeln!(out, "{x},{y}");
        }
        out
    }
}

/// Plot-ready consistency-rate series over a set of rows.
///
/// When every dataset tag ends in a number (context lengths, shot counts),
/// that number is the x coordinate; otherwise rows are numbered in order.
pub fn consistency_series(rows: &[ReportRow]) -> Series {
    let numeric: Vec<Option<f64>> = rows.iter().map(|r| trailing_number(&r.dataset)).collect();
    let all_numeric = !rows.is_empty() && numeric.iter().all(Option::is_some);
    let points = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let x = if all_numeric {
                numeric[i].expect("checked above")
            } else {
                i as f64
            };
            (x, r.consistency_rate)
        })
        .collect();
    Series {
        name: "consistency_rate".into(),
        points,
    }
}

fn trailing_number(tag: &str) -> Option<f64> {
    let start = tag.rfind(|c: char| !(c.is_ascii_digit() || c == '.')).map_or(0, |i| i + 1);
    tag[start..].parse().ok()
}

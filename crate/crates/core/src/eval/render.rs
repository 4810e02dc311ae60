//! Plain-text tables for the reports.

use super::analysis::{
    ContainmentSplit, CountComparisonReport, IntersectionReport, LengthReport, LengthSummary, PassAtKRow, RecallReport,
};
use super::passk::PassAtKMethod;
use crate::corpus::ContainmentClass;

/// Two decimals, trailing zeros (and a bare point) removed.
pub fn trimmed(value: f64) -> String {
    let s = format!("{value:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// `"a / b / c"` with [`trimmed`] values.
pub fn triple(a: f64, b: f64, c: f64) -> String {
    format!("{} / {} / {}", trimmed(a), trimmed(b), trimmed(c))
}

/// `"30 (28.0%) / 18 (60.0%)"`: CPass over the class, BPass over CPass.
pub fn containment_cell(split: &ContainmentSplit) -> String {
    format!("{} ({:.1}%) / {} ({:.1}%)", split.cpass.len(), split.cpass_pct(), split.bpass.len(), split.bpass_pct())
}

/// Higher / Equal / Lower percentages.
pub fn count_row(report: &CountComparisonReport) -> String {
    let (h, e, l) = report.percentages();
    triple(h, e, l)
}

/// Recall / BRecall / CRecall as percentages; a missing BRecall shows `-`.
pub fn recall_row(report: &RecallReport) -> String {
    let b = report.brecall.map(|b| trimmed(100.0 * b)).unwrap_or_else(|| "-".into());
    format!("{} / {} / {}", trimmed(100.0 * report.recall), b, trimmed(100.0 * report.crecall))
}

/// A column-aligned text table. The first column is left-aligned, the
/// rest right-aligned.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footnotes: Vec<String>,
}

impl Table {
    pub fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        Table { title: title.into(), headers: headers.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    /// Appends `*` to the highest numeric cell of each listed column.
    pub fn mark_best(&mut self, columns: &[usize]) {
        for &col in columns {
            let best = self
                .rows
                .iter()
                .filter_map(|r| r.get(col).and_then(|c| c.parse::<f64>().ok()))
                .fold(f64::NEG_INFINITY, f64::max);
            if !best.is_finite() {
                continue;
            }
            for row in &mut self.rows {
                if let Some(cell) = row.get_mut(col) {
                    if cell.parse::<f64>().ok() == Some(best) {
                        cell.push('*');
                    }
                }
            }
        }
    }

    pub fn render(&self) -> String {
        let cols = self.headers.len().max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        let mut widths = vec![0usize; cols];
        for r in std::iter::once(&self.headers).chain(&self.rows) {
            for (i, c) in r.iter().enumerate() {
                widths[i] = widths[i].max(c.chars().count());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut out = String::new();
            for (i, w) in widths.iter().enumerate() {
                let c = cells.get(i).map(String::as_str).unwrap_or("");
                if i > 0 {
                    out.push_str("  ");
                }
                if i == 0 {
                    out.push_str(&format!("{c:<w$}"));
                } else {
                    out.push_str(&format!("{c:>w$}"));
                }
            }
            out.trim_end().to_string()
        };
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&line(&self.headers));
        out.push('\n');
        let total: usize = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
        out.push_str(&"-".repeat(total));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        for f in &self.footnotes {
            out.push_str(f);
            out.push('\n');
        }
        out
    }
}

pub fn pass_at_k_table(rows: &[PassAtKRow], method: PassAtKMethod) -> Table {
    let ks: Vec<u32> = rows.first().map(|r| r.estimator.iter().map(|(k, _)| *k).collect()).unwrap_or_default();
    let label = match method {
        PassAtKMethod::Estimator => "estimator",
        PassAtKMethod::Empirical => "empirical",
    };
    let mut headers = vec!["Condition".to_string()];
    headers.extend(ks.iter().map(|k| format!("Pass@{k}")));
    headers.push("Tasks".into());
    let mut t = Table { title: format!("Pass@k ({label}, %)"), headers, ..Default::default() };
    for r in rows {
        let values = match method {
            PassAtKMethod::Estimator => &r.estimator,
            PassAtKMethod::Empirical => &r.empirical,
        };
        let mut cells = vec![r.condition.to_string()];
        cells.extend(values.iter().map(|(_, v)| format!("{v:.2}")));
        cells.push(r.tasks.to_string());
        t.row(cells);
    }
    t.mark_best(&(1..=ks.len()).collect::<Vec<_>>());
    t
}

fn class_label(class: ContainmentClass) -> &'static str {
    match class {
        ContainmentClass::FullyContained => "Fully contained",
        ContainmentClass::PartiallyContained => "Partially contained",
        ContainmentClass::NotIncluded => "Not included",
    }
}

pub fn intersection_tables(report: &IntersectionReport) -> Vec<Table> {
    let mut sets = Table::new(format!("Pass sets at Pass@{}", report.k), &["Conditions", "Tasks", "Ids"]);
    for (c, s) in &report.pass_sets {
        sets.row(vec![c.to_string(), s.len().to_string(), join(s)]);
    }
    for i in &report.intersections {
        let name = i.conditions.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(" & ");
        sets.row(vec![name, i.tasks.len().to_string(), join(&i.tasks)]);
    }
    sets.row(vec!["union".into(), report.union.len().to_string(), join(&report.union)]);
    sets.footnotes.push(format!(
        "coverage: {}",
        if report.coverage_complete { "every task is passed by some condition" } else { "incomplete" }
    ));
    let mut out = vec![sets];
    if !report.containment.is_empty() {
        let mut c = Table::new("Containment (CPass / BPass)", &["Class", "Tasks", "CPass / BPass"]);
        for split in &report.containment {
            c.row(vec![class_label(split.class).into(), split.total.to_string(), containment_cell(split)]);
        }
        c.footnotes.push(format!("{} task(s) passed by Pure are excluded", report.trivially_passed.len()));
        out.push(c);
    }
    out
}

fn join(set: &std::collections::BTreeSet<String>) -> String {
    if set.is_empty() {
        "-".into()
    } else {
        set.iter().cloned().collect::<Vec<_>>().join(",")
    }
}

pub fn count_table(report: &CountComparisonReport) -> Table {
    let mut t = Table::new("Retrieved vs oracle API count (%)", &["Higher", "Equal", "Lower", "Tasks"]);
    let (h, e, l) = report.percentages();
    t.row(vec![trimmed(h), trimmed(e), trimmed(l), report.total().to_string()]);
    if !report.excluded.is_empty() {
        t.footnotes.push(format!("excluded (no oracle APIs): {}", report.excluded.join(",")));
    }
    t
}

pub fn recall_table(label: &str, report: &RecallReport) -> Table {
    let mut t = Table::new("API recall (%)", &["Run", "Recall", "BRecall", "CRecall", "Tasks"]);
    let b = report.brecall.map(|b| trimmed(100.0 * b)).unwrap_or_else(|| "-".into());
    t.row(vec![
        label.to_string(),
        trimmed(100.0 * report.recall),
        b,
        trimmed(100.0 * report.crecall),
        report.tasks.to_string(),
    ]);
    if !report.excluded.is_empty() {
        t.footnotes.push(format!("excluded (no oracle APIs): {}", report.excluded.join(",")));
    }
    t
}

fn summary_cells(name: &str, s: &LengthSummary) -> Vec<String> {
    if s.is_empty() {
        return vec![name.into(), "0".into(), "empty".into(), "".into(), "".into(), "".into()];
    }
    vec![
        name.into(),
        s.count.to_string(),
        s.min.unwrap_or(0).to_string(),
        trimmed(s.median.unwrap_or(0.0)),
        trimmed(s.mean.unwrap_or(0.0)),
        s.max.unwrap_or(0).to_string(),
    ]
}

pub fn length_table(report: &LengthReport, estimator: &str) -> Table {
    let mut t = Table::new(
        format!("ConAPI prompt length ({estimator} tokens)"),
        &["Partition", "Tasks", "Min", "Median", "Mean", "Max"],
    );
    t.row(summary_cells("API & ConAPI pass", &report.both_pass));
    t.row(summary_cells("API only", &report.api_only_pass));
    t
}

//! Tab-separated result tables.
//!
//! A report has a header line, one percentage row per feature combination
//! (QMS and mAP per camera pair plus the cumulative column), then the raw
//! counts behind every cell, per fold and pooled. Degenerate cells are
//! listed as `#` notes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ReidError, Result};
use crate::evaluation::{CameraPair, FoldedReport, PairStats};

pub const REPORT_HEADER: &str = "# fishreid report v1";
const CUM: &str = "Cum.";

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

fn count_line(out: &mut String, label: &str, fold: &str, pair: &str, s: &PairStats) {
    writeln!(
        out,
        "counts\t{label}\t{fold}\t{pair}\t{}\t{}\t{}\t{}",
        s.qms.correct, s.qms.possible, s.ap.sum, s.ap.queries
    )
    .unwrap();
}

pub fn format_report(reports: &[(String, FoldedReport)]) -> String {
    let pairs: BTreeSet<CameraPair> = reports
        .iter()
        .flat_map(|(_, r)| r.folds.values().flat_map(|e| e.per_pair.keys().cloned()))
        .collect();

    let mut out = String::new();
    out.push_str(REPORT_HEADER);
    out.push('\n');
    let mut head = vec!["features".to_owned()];
    for metric in ["QMS", "mAP"] {
        head.extend(pairs.iter().map(|p| format!("{metric} {p}")));
        head.push(format!("{metric} {CUM}"));
    }
    out.push_str(&head.join("\t"));
    out.push('\n');

    let mut notes = Vec::new();
    for (label, folded) in reports {
        let pooled = folded.pooled();
        let mut cells = vec![label.clone()];
        let stats: Vec<(String, PairStats)> = pairs
            .iter()
            .map(|p| (p.to_string(), pooled.per_pair.get(p).copied().unwrap_or_default()))
            .chain(std::iter::once((CUM.to_owned(), pooled.cumulative())))
            .collect();
        for (name, s) in &stats {
            cells.push(pct(s.qms.value()));
            if s.qms.is_degenerate() {
                notes.push(format!(
                    "# note: {label} {name} QMS has no shared identities (0/0)"
                ));
            }
        }
        for (name, s) in &stats {
            cells.push(pct(s.ap.value()));
            if s.ap.queries == 0 {
                notes.push(format!("# note: {label} {name} mAP has no matchable queries"));
            }
        }
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    for n in notes {
        out.push_str(&n);
        out.push('\n');
    }

    out.push_str("#counts\tfeatures\tfold\tpair\tcorrect\tpossible\tap_sum\tap_queries\n");
    for (label, folded) in reports {
        for (fold, rep) in &folded.folds {
            for (pair, s) in &rep.per_pair {
                count_line(&mut out, label, &fold.to_string(), &pair.to_string(), s);
            }
            count_line(&mut out, label, &fold.to_string(), CUM, &rep.cumulative());
        }
        let pooled = folded.pooled();
        for (pair, s) in &pooled.per_pair {
            count_line(&mut out, label, "pooled", &pair.to_string(), s);
        }
        count_line(&mut out, label, "pooled", CUM, &pooled.cumulative());
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub features: String,
    /// Percentages keyed by column header, e.g. `QMS C1+C2`.
    pub cells: Vec<(String, f64)>,
}

impl ReportRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        self.cells.iter().find(|(c, _)| c == column).map(|(_, v)| *v)
    }
}

/// Reads back the percentage rows of a report.
pub fn parse_report(text: &str, path: &Path) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l == REPORT_HEADER => {}
        _ => return Err(ReidError::parse(path, 1, format!("expected `{REPORT_HEADER}`"))),
    }
    let (_, head) = lines
        .next()
        .ok_or_else(|| ReidError::parse(path, 2, "missing column header"))?;
    let columns: Vec<&str> = head.split('\t').collect();
    if columns.first() != Some(&"features") {
        return Err(ReidError::parse(
            path,
            2,
            "column header must start with `features`",
        ));
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.starts_with('#') || line.starts_with("counts\t") || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != columns.len() {
            return Err(ReidError::parse(
                path,
                n + 1,
                format!("{} fields, expected {}", fields.len(), columns.len()),
            ));
        }
        let cells = columns[1..]
            .iter()
            .zip(&fields[1..])
            .map(|(c, v)| {
                v.parse::<f64>()
                    .map(|x| ((*c).to_owned(), x))
                    .map_err(|e| ReidError::parse(path, n + 1, format!("`{v}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ReportRow {
            features: fields[0].to_owned(),
            cells,
        });
    }
    Ok(rows)
}

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Metrics, Scope, Split};
use crate::embedding::ModelKind;
use crate::error::{Error, Result};
use crate::pipeline::Arm;

pub const CSV_HEADER: &str = "arm,scope,split,model,metric,value";
const METRICS: [&str; 4] = ["MRR", "Hits@1", "Hits@3", "Hits@10"];

/// One table row: MRR, Hits@1, Hits@3, Hits@10 for an arm/scope/split/model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub arm: Arm,
    pub scope: Scope,
    pub split: Split,
    pub model: ModelKind,
    pub values: [f64; 4],
}

impl ReportRow {
    pub fn new(arm: Arm, scope: Scope, split: Split, model: ModelKind, m: &Metrics) -> Self {
        Self {
            arm,
            scope,
            split,
            model,
            values: [m.mrr, m.hits1, m.hits3, m.hits10],
        }
    }

    pub fn mrr(&self) -> f64 {
        self.values[0]
    }

    pub fn hits1(&self) -> f64 {
        self.values[1]
    }

    fn key(&self) -> (Scope, Arm, Split, String) {
        (self.scope, self.arm, self.split, self.model.to_string())
    }
}

/// Report order: scope, then arm, then split.
pub fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by_key(|a| a.key());
}

/// Writes `report.md` and `report.csv` into `dir`. Rows are ordered scope,
/// then arm, then split.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<()> {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut csv = format!("{CSV_HEADER}\n");
    for r in &rows {
        for (name, v) in METRICS.iter().zip(r.values) {
            let _ = writeln!(
                csv,
                "{},{},{},{},{name},{v:.6}",
                r.arm, r.scope, r.split, r.model
            );
        }
    }
    let path = dir.join("report.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    let path = dir.join("report.md");
    fs::write(&path, markdown(&rows)).map_err(|e| Error::io(&path, e))
}

fn markdown(rows: &[ReportRow]) -> String {
    let models: BTreeSet<String> = rows.iter().map(|r| r.model.to_string()).collect();
    let mut out = String::from("| Model |");
    for m in &models {
        let _ = write!(out, " {m} MRR | {m} Hits@1 |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(2 * models.len()));
    out.push('\n');

    let mut groups: Vec<(Scope, Arm, Split)> =
        rows.iter().map(|r| (r.scope, r.arm, r.split)).collect();
    groups.dedup();
    for (scope, arm, split) in groups {
        let _ = write!(out, "| {} {scope} /{split} |", arm.title());
        for m in &models {
            match rows.iter().find(|r| {
                (r.scope, r.arm, r.split) == (scope, arm, split) && &r.model.to_string() == m
            }) {
                Some(r) => {
                    let _ = write!(
                        out,
                        " {:.2}% | {:.2}% |",
                        100.0 * r.mrr(),
                        100.0 * r.hits1()
                    );
                }
                None => out.push_str(" - | - |"),
            }
        }
        out.push('\n');
    }
    out
}

/// Parses a CSV written by [`emit_report`].
pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(parse_err(1, format!("expected header {CSV_HEADER:?}"))),
    }
    let mut rows: Vec<ReportRow> = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(
                i + 1,
                format!("expected 6 fields, got {}", f.len()),
            ));
        }
        let err = |e: Error| parse_err(i + 1, e.to_string());
        let arm: Arm = f[0].parse().map_err(err)?;
        let scope: Scope = f[1].parse().map_err(err)?;
        let split: Split = f[2].parse().map_err(err)?;
        let model: ModelKind = f[3].parse().map_err(err)?;
        let slot = METRICS
            .iter()
            .position(|m| *m == f[4])
            .ok_or_else(|| parse_err(i + 1, format!("unknown metric {:?}", f[4])))?;
        let value: f64 = f[5]
            .parse()
            .map_err(|_| parse_err(i + 1, format!("not a number: {:?}", f[5])))?;
        let idx = match rows
            .iter()
            .position(|r| (r.arm, r.scope, r.split, r.model) == (arm, scope, split, model))
        {
            Some(idx) => idx,
            None => {
                rows.push(ReportRow {
                    arm,
                    scope,
                    split,
                    model,
                    values: [f64::NAN; 4],
                });
                rows.len() - 1
            }
        };
        rows[idx].values[slot] = value;
    }
    if let Some(r) = rows.iter().find(|r| r.values.iter().any(|v| v.is_nan())) {
        return Err(parse_err(
            0,
            format!(
                "incomplete metrics for {} {} {} {}",
                r.arm, r.scope, r.split, r.model
            ),
        ));
    }
    Ok(rows)
}

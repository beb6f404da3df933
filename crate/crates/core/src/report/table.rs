use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{ExperimentSummary, ReportError};
use crate::data::TaskPreset;
use crate::protocols::{ModelFamily, Paradigm};

/// Marker for cells without any record.
pub const MISSING: &str = "—";

/// q* per (model, task) for one paradigm, laid out with model rows and task
/// columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub paradigm: Paradigm,
    pub rows: Vec<ModelFamily>,
    pub columns: Vec<String>,
    /// Indexed `[row][column]`.
    pub cells: Vec<Vec<Option<f64>>>,
    pub chance: Vec<Option<f64>>,
}

fn preset_columns() -> Vec<String> {
    TaskPreset::all().map(|p| p.name().to_string()).collect()
}

impl ResultTable {
    /// One table per paradigm present in `summaries`. A cell holding several
    /// seeds shows their mean. Columns are the twelve presets followed by any
    /// other task names found.
    pub fn build(summaries: &[ExperimentSummary]) -> Vec<ResultTable> {
        let mut by_paradigm: BTreeMap<Paradigm, Vec<&ExperimentSummary>> = BTreeMap::new();
        for s in summaries {
            by_paradigm.entry(s.paradigm).or_default().push(s);
        }
        by_paradigm
            .into_iter()
            .map(|(paradigm, group)| {
                let mut columns = preset_columns();
                for s in &group {
                    if !columns.contains(&s.task) {
                        columns.push(s.task.clone());
                    }
                }
                let rows = ModelFamily::ALL.to_vec();
                let mut sums = vec![vec![(0.0, 0usize); columns.len()]; rows.len()];
                let mut chance = vec![None; columns.len()];
                for s in &group {
                    let r = rows.iter().position(|m| *m == s.model).expect("all families are rows");
                    let c = columns.iter().position(|t| *t == s.task).expect("column was added");
                    sums[r][c].0 += s.q_star;
                    sums[r][c].1 += 1;
                    chance[c] = Some(s.chance_level);
                }
                let cells = sums
                    .into_iter()
                    .map(|row| row.into_iter().map(|(sum, n)| (n > 0).then(|| sum / n as f64)).collect())
                    .collect();
                ResultTable { paradigm, rows, columns, cells, chance }
            })
            .collect()
    }

    /// Aligned plain text; values rounded to two decimals.
    pub fn render_text(&self) -> String {
        let fmt = |v: &Option<f64>| v.map_or(MISSING.to_string(), |x| format!("{x:.2}"));
        let mut grid: Vec<Vec<String>> = Vec::new();
        grid.push(std::iter::once("model".to_string()).chain(self.columns.iter().cloned()).collect());
        for (m, row) in self.rows.iter().zip(&self.cells) {
            grid.push(std::iter::once(m.name().to_string()).chain(row.iter().map(fmt)).collect());
        }
        grid.push(std::iter::once("chance".to_string()).chain(self.chance.iter().map(fmt)).collect());

        let widths: Vec<usize> = (0..grid[0].len())
            .map(|c| grid.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = format!("{} evaluation (q*)\n", self.paradigm);
        for (i, r) in grid.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, &w))| {
                    let pad = w - v.chars().count();
                    if c == 0 { format!("{v}{}", " ".repeat(pad)) } else { format!("{}{v}", " ".repeat(pad)) }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 || i == grid.len() - 2 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }

    /// CSV with full-precision values; the last row holds chance levels.
    pub fn render_csv(&self) -> String {
        let fmt = |v: &Option<f64>| v.map_or(MISSING.to_string(), |x| x.to_string());
        let mut out = format!("{},{}\n", self.paradigm, self.columns.join(","));
        for (m, row) in self.rows.iter().zip(&self.cells) {
            let vals: Vec<String> = row.iter().map(fmt).collect();
            let _ = writeln!(out, "{},{}", m.name(), vals.join(","));
        }
        let vals: Vec<String> = self.chance.iter().map(fmt).collect();
        let _ = writeln!(out, "chance,{}", vals.join(","));
        out
    }

    /// Inverse of [`render_csv`](Self::render_csv).
    pub fn parse_csv(text: &str) -> Result<ResultTable, ReportError> {
        let bad = |what: String| ReportError::Corrupt(format!("table CSV: {what}"));
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let mut head = header.split(',');
        let paradigm: Paradigm = head
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e: crate::protocols::ProtocolError| bad(e.to_string()))?;
        let columns: Vec<String> = head.map(str::to_string).collect();
        let parse_row = |rest: std::str::Split<'_, char>| -> Result<Vec<Option<f64>>, ReportError> {
            let vals = rest
                .map(|v| if v == MISSING { Ok(None) } else { v.parse().map(Some).map_err(|_| bad(format!("value {v:?}"))) })
                .collect::<Result<Vec<_>, _>>()?;
            if vals.len() != columns.len() {
                return Err(bad(format!("expected {} values, got {}", columns.len(), vals.len())));
            }
            Ok(vals)
        };
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        let mut chance = None;
        for l in lines {
            let mut f = l.split(',');
            let label = f.next().unwrap_or_default();
            if label == "chance" {
                chance = Some(parse_row(f)?);
            } else {
                rows.push(label.parse::<ModelFamily>().map_err(|e| bad(e.to_string()))?);
                cells.push(parse_row(f)?);
            }
        }
        let chance = chance.ok_or_else(|| bad("missing chance row".into()))?;
        Ok(ResultTable { paradigm, rows, columns, cells, chance })
    }
}

//! Side-by-side tables of several checkpoints over several splits.

use std::collections::BTreeMap;

use super::{EvalResult, Metrics};
use crate::corpus::Split;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub cells: BTreeMap<Split, Metrics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub splits: Vec<Split>,
    pub rows: Vec<ReportRow>,
}

const FIELDS: [&str; 4] = ["rems", "ems", "error_count", "error_rate"];

fn field(m: &Metrics, name: &str) -> f64 {
    match name {
        "rems" => m.rems,
        "ems" => m.ems,
        "error_count" => m.error_count as f64,
        "error_rate" => m.error_rate,
        _ => unreachable!(),
    }
}

/// Groups results by checkpoint label (first appearance order). Splits are
/// the union of those present, in canonical order.
pub fn compare(results: &[EvalResult]) -> Report {
    let mut rows: Vec<ReportRow> = Vec::new();
    let mut present = Vec::new();
    for r in results {
        let Ok(split) = r.split.parse::<Split>() else { continue };
        if !present.contains(&split) {
            present.push(split);
        }
        let row = match rows.iter_mut().position(|row| row.model == r.checkpoint) {
            Some(i) => &mut rows[i],
            None => {
                rows.push(ReportRow { model: r.checkpoint.clone(), cells: BTreeMap::new() });
                rows.last_mut().unwrap()
            }
        };
        row.cells.insert(split, r.metrics.clone());
    }
    let splits = Split::ALL.into_iter().filter(|s| present.contains(s)).collect();
    Report { splits, rows }
}

impl Report {
    fn with_deltas(&self) -> bool {
        self.rows.len() >= 2
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["model".to_string()];
        for s in &self.splits {
            h.extend(FIELDS.iter().map(|f| format!("{}_{f}", s.name())));
        }
        if self.with_deltas() {
            for s in &self.splits {
                h.extend(FIELDS.iter().map(|f| format!("delta_{}_{f}", s.name())));
            }
        }
        h
    }

    /// Deltas are relative to the first row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.csv_header()).expect("in-memory write");
        let base = self.rows.first();
        for row in &self.rows {
            let mut rec = vec![row.model.clone()];
            for s in &self.splits {
                for f in FIELDS {
                    rec.push(row.cells.get(s).map(|m| fmt_num(field(m, f))).unwrap_or_default());
                }
            }
            if self.with_deltas() {
                for s in &self.splits {
                    for f in FIELDS {
                        let d = match (row.cells.get(s), base.and_then(|b| b.cells.get(s))) {
                            (Some(m), Some(b)) => fmt_num(field(m, f) - field(b, f)),
                            _ => String::new(),
                        };
                        rec.push(d);
                    }
                }
            }
            w.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    pub fn to_text(&self) -> String {
        let mut header = vec!["Model".to_string()];
        for s in &self.splits {
            for f in ["REMS", "EMS", "#Error"] {
                header.push(format!("{} {f}", s.label()));
            }
        }
        let mut lines = vec![header];
        let base = self.rows.first();
        for (i, row) in self.rows.iter().enumerate() {
            let mut line = vec![row.model.clone()];
            for s in &self.splits {
                match row.cells.get(s) {
                    Some(m) => {
                        let delta = |f: &str| match (i > 0, base.and_then(|b| b.cells.get(s))) {
                            (true, Some(b)) if f == "error_count" => {
                                format!(" ({:+})", m.error_count as i64 - b.error_count as i64)
                            }
                            (true, Some(b)) => format!(" ({:+.2})", field(m, f) - field(b, f)),
                            _ => String::new(),
                        };
                        line.push(format!("{:.2}{}", m.rems, delta("rems")));
                        line.push(format!("{:.2}{}", m.ems, delta("ems")));
                        line.push(format!("{}{}", m.error_count, delta("error_count")));
                    }
                    None => line.extend(["-".to_string(), "-".to_string(), "-".to_string()]),
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> =
            (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (s, &w))| if c == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if i == 0 {
                out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
                out.push('\n');
            }
        }
        out
    }
}

fn fmt_num(x: f64) -> String {
    // `Display` for f64 prints the shortest string that parses back exactly.
    format!("{x}")
}

/// Reads the absolute columns of a CSV produced by [`Report::to_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let mut row = ReportRow { model: rec.get(0).unwrap_or_default().to_string(), cells: BTreeMap::new() };
        for (name, value) in header.iter().zip(rec.iter()).skip(1) {
            if name.starts_with("delta_") || value.is_empty() {
                continue;
            }
            let (split, f) = FIELDS
                .iter()
                .find_map(|f| name.strip_suffix(&format!("_{f}")).map(|s| (s, *f)))
                .ok_or_else(|| format!("unexpected column '{name}'"))?;
            let split: Split = split.parse()?;
            let v: f64 = value.parse().map_err(|_| format!("bad number '{value}' in {name}"))?;
            let m = row.cells.entry(split).or_default();
            match f {
                "rems" => m.rems = v,
                "ems" => m.ems = v,
                "error_count" => m.error_count = v as usize,
                "error_rate" => m.error_rate = v,
                _ => unreachable!(),
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::EmsMode;

    fn result(split: &str, ckpt: &str, ems: f64, rems: f64, errors: usize, n: usize) -> EvalResult {
        EvalResult {
            split: split.into(),
            checkpoint: ckpt.into(),
            ems_mode: EmsMode::Exact,
            metrics: Metrics {
                n,
                ems,
                rems,
                error_count: errors,
                error_rate: 100.0 * errors as f64 / n as f64,
                failure_count: 0,
            },
            by_difficulty: BTreeMap::new(),
            records: vec![],
        }
    }

    #[test]
    fn single_result_is_one_row_without_deltas() {
        let rep = compare(&[result("test_original", "base", 20.0, 35.5, 3, 12)]);
        assert_eq!(rep.rows.len(), 1);
        assert!(!rep.to_csv().contains("delta_"));
        assert_eq!(rep.to_text().lines().count(), 3);
    }

    #[test]
    fn two_checkpoints_get_delta_columns() {
        let rep = compare(&[
            result("test_original", "base", 20.0, 35.5, 3, 12),
            result("test_original", "trained", 50.0, 61.25, 1, 12),
            result("test_hard", "trained", 1.0 / 3.0, 0.5, 0, 12),
        ]);
        assert_eq!(rep.splits, vec![Split::TestOriginal, Split::TestHard]);
        let csv = rep.to_csv();
        assert!(csv.lines().next().unwrap().contains("delta_test_original_ems"));
        assert!(csv.lines().nth(2).unwrap().contains(",30,"));
        assert!(rep.to_text().contains("(+30.00)"));
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let results = [
            result("test_original", "base", 100.0 / 3.0, 0.1 + 0.2, 7, 21),
            result("test_counterfactual", "base", 2.0 / 7.0, 1e-9, 0, 9),
            result("test_original", "run", 12.5, 99.99999999999, 21, 21),
        ];
        let rep = compare(&results);
        let back = parse_report_csv(&rep.to_csv()).unwrap();
        for r in &results {
            let row = back.iter().find(|row| row.model == r.checkpoint).unwrap();
            let m = &row.cells[&r.split.parse::<Split>().unwrap()];
            assert_eq!(m.ems.to_bits(), r.metrics.ems.to_bits());
            assert_eq!(m.rems.to_bits(), r.metrics.rems.to_bits());
            assert_eq!(m.error_rate.to_bits(), r.metrics.error_rate.to_bits());
            assert_eq!(m.error_count, r.metrics.error_count);
        }
    }
}

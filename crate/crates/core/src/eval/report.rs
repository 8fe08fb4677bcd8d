//! Comparative reports in the layout `System, TP, FP, FN, Precision, Recall,
//! F1-score`, as aligned text or CSV. Percentages carry one decimal, rounded
//! half to even; undefined rates print as `—`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{format_tenths, tenths_of_percent, MetricsReport, UNDEFINED};
use super::{EvalError, PerImageRecall};

pub const REPORT_COLUMNS: [&str; 7] = [
    "System",
    "TP",
    "FP",
    "FN",
    "Precision",
    "Recall",
    "F1-score",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    DelimitedValues,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemReport {
    pub system: String,
    pub aggregate: MetricsReport,
    pub per_image: Vec<PerImageRecall>,
}

/// One rendered row; rates held as tenths of a percent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub precision: Option<u64>,
    pub recall: Option<u64>,
    pub f1: Option<u64>,
}

impl ReportRow {
    pub fn from_metrics(system: &str, m: &MetricsReport) -> Self {
        Self {
            system: system.to_string(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
            precision: m.precision.as_ref().map(tenths_of_percent),
            recall: m.recall.as_ref().map(tenths_of_percent),
            f1: m.f1.as_ref().map(tenths_of_percent),
        }
    }

    fn cells(&self) -> [String; 7] {
        [
            self.system.clone(),
            self.tp.to_string(),
            self.fp.to_string(),
            self.fn_.to_string(),
            format_tenths(self.precision),
            format_tenths(self.recall),
            format_tenths(self.f1),
        ]
    }
}

fn table(rows: &[[String; 7]]) -> String {
    let header: [String; 7] = REPORT_COLUMNS.map(String::from);
    let all: Vec<&[String; 7]> = std::iter::once(&header).chain(rows).collect();
    let widths: Vec<usize> = (0..7)
        .map(|c| all.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in all {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.push_str(&" ".repeat(pad));
            } else {
                line.push_str("  ");
                line.push_str(&" ".repeat(pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn emit_report(reports: &[SystemReport], format: ReportFormat) -> String {
    let rows: Vec<ReportRow> = reports
        .iter()
        .map(|r| ReportRow::from_metrics(&r.system, &r.aggregate))
        .collect();
    match format {
        ReportFormat::TableText => {
            let cells: Vec<[String; 7]> = rows.iter().map(ReportRow::cells).collect();
            let mut out = table(&cells);
            for report in reports.iter().filter(|r| !r.per_image.is_empty()) {
                let met = report.per_image.iter().filter(|p| p.met_half).count();
                let _ = writeln!(
                    out,
                    "\n{}: recall >= 50% in {} of {} images",
                    report.system,
                    met,
                    report.per_image.len()
                );
                for p in &report.per_image {
                    let _ = writeln!(
                        out,
                        "  {}  TP {}  FN {}  recall {}{}",
                        p.case_id,
                        p.tp,
                        p.fn_,
                        format_tenths(p.recall.as_ref().map(tenths_of_percent)),
                        if p.met_half { "  *" } else { "" }
                    );
                }
            }
            out
        }
        ReportFormat::DelimitedValues => {
            let mut writer = csv::Writer::from_writer(Vec::new());
            writer.write_record(REPORT_COLUMNS).expect("in-memory csv");
            for row in &rows {
                writer.write_record(row.cells()).expect("in-memory csv");
            }
            String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
        }
    }
}

pub fn emit_per_image_csv(reports: &[SystemReport]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer
        .write_record(["System", "Case", "TP", "FN", "Recall", "Recall>=50%"])
        .expect("in-memory csv");
    for report in reports {
        for p in &report.per_image {
            writer
                .write_record([
                    report.system.clone(),
                    p.case_id.clone(),
                    p.tp.to_string(),
                    p.fn_.to_string(),
                    format_tenths(p.recall.as_ref().map(tenths_of_percent)),
                    p.met_half.to_string(),
                ])
                .expect("in-memory csv");
        }
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv")).expect("utf-8 csv")
}

fn parse_tenths(line: usize, cell: &str) -> Result<Option<u64>, EvalError> {
    if cell == UNDEFINED {
        return Ok(None);
    }
    let bad = || EvalError::Parse {
        line,
        message: format!("bad percentage {cell:?}"),
    };
    let number = cell.strip_suffix('%').ok_or_else(bad)?;
    let (whole, frac) = number.split_once('.').ok_or_else(bad)?;
    if frac.len() != 1 {
        return Err(bad());
    }
    let whole: u64 = whole.parse().map_err(|_| bad())?;
    let frac: u64 = frac.parse().map_err(|_| bad())?;
    Ok(Some(whole * 10 + frac))
}

/// Reads back the CSV form of [`emit_report`].
pub fn parse_delimited_report(text: &str) -> Result<Vec<ReportRow>, EvalError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| EvalError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if !headers.iter().eq(REPORT_COLUMNS.iter().copied()) {
        return Err(EvalError::Parse {
            line: 1,
            message: format!("unexpected header {headers:?}"),
        });
    }
    let mut rows = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let line = index + 2;
        let record = record.map_err(|e| EvalError::Parse {
            line,
            message: e.to_string(),
        })?;
        let count = |c: usize| -> Result<u64, EvalError> {
            record[c].parse().map_err(|_| EvalError::Parse {
                line,
                message: format!("bad count {:?}", &record[c]),
            })
        };
        rows.push(ReportRow {
            system: record[0].to_string(),
            tp: count(1)?,
            fp: count(2)?,
            fn_: count(3)?,
            precision: parse_tenths(line, &record[4])?,
            recall: parse_tenths(line, &record[5])?,
            f1: parse_tenths(line, &record[6])?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::super::compute_metrics;
    use super::*;

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(
            emit_report(&[], ReportFormat::TableText).trim_end(),
            "System  TP  FP  FN  Precision  Recall  F1-score"
        );
        assert_eq!(
            emit_report(&[], ReportFormat::DelimitedValues),
            "System,TP,FP,FN,Precision,Recall,F1-score\n"
        );
    }

    #[test]
    fn undefined_renders_as_dash_and_parses_back() {
        let report = SystemReport {
            system: "empty".into(),
            aggregate: compute_metrics(0, 0, 0),
            per_image: vec![],
        };
        let csv = emit_report(&[report], ReportFormat::DelimitedValues);
        assert!(csv.contains("empty,0,0,0,—,—,—"));
        let rows = parse_delimited_report(&csv).unwrap();
        assert_eq!(rows[0].precision, None);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(parse_delimited_report("a,b\n1,2\n").is_err());
    }
}

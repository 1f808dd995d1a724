//! Evaluation report files: full JSON and flat CSV.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{EvalReport, REPORT_FORMAT_VERSION};

/// Relative tolerance for cohort means recomputed on load.
pub const REPORT_CHECK_TOLERANCE: f64 = 1e-12;

pub fn report_to_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// Parses a report and checks that its cohort values follow from its rows.
pub fn report_from_json(text: &str) -> Result<EvalReport> {
    let report: EvalReport = serde_json::from_str(text)?;
    if report.format_version != REPORT_FORMAT_VERSION {
        return Err(Error::Unsupported(format!(
            "report format_version {} (expected {REPORT_FORMAT_VERSION})",
            report.format_version
        )));
    }
    report.check_consistency(REPORT_CHECK_TOLERANCE)?;
    Ok(report)
}

pub fn write_report_json(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_to_json(report)?).map_err(|e| Error::file(path, e))
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<EvalReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    report_from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub case: String,
    pub budget: usize,
    pub dice: f64,
    pub fpvol: f64,
    pub fnvol: f64,
}

pub fn csv_rows(report: &EvalReport) -> Vec<CsvRow> {
    report
        .cases
        .iter()
        .flat_map(|c| {
            c.curve.budgets.iter().zip(&c.curve.rows).map(|(&budget, m)| CsvRow {
                case: c.case_id.clone(),
                budget,
                dice: m.dice,
                fpvol: m.fpvol_mm3,
                fnvol: m.fnvol_mm3,
            })
        })
        .collect()
}

pub fn report_to_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in csv_rows(report) {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_report_csv(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_to_csv(report)?).map_err(|e| Error::file(path, e))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(Error::from)
}

pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_report_csv(&text)
}

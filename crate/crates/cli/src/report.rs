//! The `report` stage: CSV tables and MI histogram data.

use std::path::{Path, PathBuf};

use cikmar_core::metrics::{EvalReport, RowOutcome, COMPONENT_NAMES};

use crate::error::CliError;
use crate::evaluate::REPORT_FILE;
use crate::fsio;

pub const SUMMARY_FILE: &str = "summary.csv";
pub const ROWS_CSV_FILE: &str = "rows.csv";
pub const HISTOGRAM_FILE: &str = "mi_histogram.csv";
pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Csv,
    Histogram,
}

/// Accepts the report file itself, its `eval/` directory, or a run directory.
pub fn resolve_report(path: &Path) -> PathBuf {
    if path.is_dir() {
        let direct = path.join(REPORT_FILE);
        if direct.is_file() {
            return direct;
        }
        return path.join("eval").join(REPORT_FILE);
    }
    path.to_path_buf()
}

/// `reports/` next to the `eval/` directory holding `report_file`.
pub fn default_out_dir(report_file: &Path) -> PathBuf {
    let parent = report_file.parent().unwrap_or(Path::new("."));
    let base = if parent.file_name().is_some_and(|n| n == "eval") {
        parent.parent().unwrap_or(Path::new("."))
    } else {
        parent
    };
    base.join("reports")
}

fn csv_bytes(header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), CliError> {
    let bytes = csv_bytes(header, rows).map_err(|e| CliError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fsio::write_atomic(path, &bytes)
}

/// One row per metric component of the aggregate.
pub fn summary_rows(report: &EvalReport) -> Vec<Vec<String>> {
    report
        .aggregate
        .as_ref()
        .map(|agg| {
            agg.components()
                .into_iter()
                .map(|(m, c, v)| vec![m.to_string(), c.to_string(), v.to_string()])
                .collect()
        })
        .unwrap_or_default()
}

fn component_header() -> Vec<String> {
    COMPONENT_NAMES.iter().map(|(m, c)| format!("{m}_{c}")).collect()
}

/// Header plus one row per conversation.
pub fn row_table(report: &EvalReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["conversation_id".to_string(), "status".into(), "reason".into()];
    let components = component_header();
    let width = components.len();
    header.extend(components);
    let rows = report
        .rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.conversation_id.clone()];
            match &r.outcome {
                RowOutcome::Ok(s) => {
                    cells.extend(["ok".to_string(), String::new()]);
                    cells.extend(s.components().into_iter().map(|(_, _, v)| v.to_string()));
                }
                RowOutcome::Failed { reason } => {
                    cells.extend(["failed".to_string(), reason.clone()]);
                    cells.extend(std::iter::repeat_n(String::new(), width));
                }
            }
            cells
        })
        .collect();
    (header, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bin {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Equal-width bins over `[min, max]`; the last bin is closed. All-equal
/// input gives a single bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<Bin> {
    let Some(min) = values.iter().copied().reduce(f64::min) else {
        return Vec::new();
    };
    let max = values.iter().copied().fold(min, f64::max);
    if min == max || bins <= 1 {
        return vec![Bin {
            start: min,
            end: max,
            count: values.len(),
        }];
    }
    let width = (max - min) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            start: min + width * i as f64,
            end: if i + 1 == bins { max } else { min + width * (i + 1) as f64 },
            count: 0,
        })
        .collect();
    for v in values {
        let i = (((v - min) / width) as usize).min(bins - 1);
        out[i].count += 1;
    }
    out
}

pub fn report(eval_path: &Path, format: ReportFormat, out_dir: Option<&Path>, bins: usize) -> Result<Vec<PathBuf>, CliError> {
    let file = resolve_report(eval_path);
    let report: EvalReport = fsio::read_json(&file)?;
    let out = out_dir.map(Path::to_path_buf).unwrap_or_else(|| default_out_dir(&file));
    match format {
        ReportFormat::Csv => {
            let summary = out.join(SUMMARY_FILE);
            write_csv(&summary, &["metric", "component", "mean"], summary_rows(&report))?;
            let rows = out.join(ROWS_CSV_FILE);
            let (header, table) = row_table(&report);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_csv(&rows, &header, table)?;
            Ok(vec![summary, rows])
        }
        ReportFormat::Histogram => {
            if bins == 0 {
                return Err(CliError::Config("bins must be at least 1".into()));
            }
            let values: Vec<f64> = report.rows.iter().filter_map(|r| r.scores()).map(|s| s.mi.value).collect();
            let table = histogram(&values, bins)
                .into_iter()
                .map(|b| vec![b.start.to_string(), b.end.to_string(), b.count.to_string()])
                .collect();
            let path = out.join(HISTOGRAM_FILE);
            write_csv(&path, &["bin_start", "bin_end", "count"], table)?;
            Ok(vec![path])
        }
    }
}

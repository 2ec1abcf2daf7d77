//! Trace, metrics and summary files.
//!
//! A run named `NAME` produces `NAME.trace.csv` (or `.json`),
//! `NAME.metrics.json` and `NAME.summary.csv`. An A/B pair produces the two
//! variant traces plus `NAME.ab.metrics.json` and `NAME.ab.summary.csv`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::SignalMetrics;
use super::runner::{AbReport, EventCounts, PairComparison, ScenarioResult};
use super::trace::Trace;
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

impl TraceFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TraceFormat::Csv => "csv",
            TraceFormat::Json => "json",
        }
    }
}

impl FromStr for TraceFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(TraceFormat::Csv),
            "json" => Ok(TraceFormat::Json),
            other => Err(HarnessError::Config(format!("unknown format {other:?} (expected csv or json)"))),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, msg: impl ToString) -> HarnessError {
    HarnessError::Format { path: path.to_path_buf(), msg: msg.to_string() }
}

/// Writes a header row and one row per step. Numbers use the shortest text
/// that parses back to the same `f64`.
pub fn write_trace_csv(trace: &Trace, path: &Path) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(&trace.columns).map_err(|e| format_err(path, e))?;
    let mut buf = Vec::with_capacity(trace.columns.len());
    for row in &trace.rows {
        buf.clear();
        buf.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&buf).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io(path))
}

pub fn read_trace_csv(path: &Path) -> Result<Trace, HarnessError> {
    let file = File::open(path).map_err(io(path))?;
    let mut r = csv::Reader::from_reader(file);
    let columns: Vec<String> = r.headers().map_err(|e| format_err(path, e))?.iter().map(String::from).collect();
    let mut trace = Trace::new(columns);
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| format_err(path, e))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format_err(path, format!("row {}: {f:?}: {e}", line + 1))))
            .collect::<Result<Vec<_>, _>>()?;
        trace.rows.push(row);
    }
    Ok(trace)
}

#[derive(Serialize, Deserialize)]
struct JsonTrace {
    columns: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

/// NaN entries are written as `null`.
pub fn write_trace_json(trace: &Trace, path: &Path) -> Result<(), HarnessError> {
    let jt = JsonTrace {
        columns: trace.columns.clone(),
        rows: trace.rows.iter().map(|r| r.iter().map(|v| v.is_finite().then_some(*v)).collect()).collect(),
    };
    if trace.rows.iter().flatten().any(|v| v.is_infinite()) {
        return Err(format_err(path, "JSON traces cannot hold infinite values"));
    }
    write_json(&jt, path)
}

pub fn read_trace_json(path: &Path) -> Result<Trace, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    let jt: JsonTrace = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
    Ok(Trace { columns: jt.columns, rows: jt.rows.into_iter().map(|r| r.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect()).collect() })
}

pub fn write_trace(trace: &Trace, path: &Path, format: TraceFormat) -> Result<(), HarnessError> {
    match format {
        TraceFormat::Csv => write_trace_csv(trace, path),
        TraceFormat::Json => write_trace_json(trace, path),
    }
}

pub fn read_trace(path: &Path) -> Result<Trace, HarnessError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => read_trace_json(path),
        _ => read_trace_csv(path),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(io(path))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| format_err(path, e))?;
    w.write_all(b"\n").map_err(io(path))?;
    w.flush().map_err(io(path))
}

/// Contents of `NAME.metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub scenario: String,
    pub skip_settle_s: f64,
    pub rows: usize,
    pub signals: BTreeMap<String, Option<SignalMetrics>>,
    pub events: EventCounts,
}

impl MetricsFile {
    pub fn from_result(r: &ScenarioResult) -> Self {
        Self { scenario: r.name.clone(), skip_settle_s: r.skip_settle_s, rows: r.trace.len(), signals: r.metrics.clone(), events: r.events }
    }
}

/// Contents of `NAME.ab.metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbMetricsFile {
    pub scenario: String,
    pub baseline: MetricsFile,
    pub compensated: MetricsFile,
    pub pairs: BTreeMap<String, Option<PairComparison>>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsFile, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Paths written by one export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportedFiles {
    pub traces: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub summary: PathBuf,
}

const SUMMARY_HEADER: [&str; 6] =
    ["variant", "signal", "mean_abs_error", "std_error", "mean_abs_error_delta_percent", "std_error_delta_percent"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_summary(path: &Path, rows: &[[String; 6]]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(SUMMARY_HEADER).map_err(|e| format_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| format_err(path, e))?;
    }
    w.flush().map_err(io(path))
}

fn summary_rows(variant: &str, r: &ScenarioResult, pairs: Option<&BTreeMap<String, Option<PairComparison>>>) -> Vec<[String; 6]> {
    r.signals
        .iter()
        .map(|sig| {
            let m = r.metric(&sig.name);
            let p = pairs.and_then(|p| p.get(&sig.name).copied().flatten());
            [
                variant.to_string(),
                sig.name.clone(),
                opt(m.map(|m| m.mean_abs_error)),
                opt(m.map(|m| m.std_error)),
                opt(p.map(|p| p.mean_abs_error_delta_percent)),
                opt(p.map(|p| p.std_error_delta_percent)),
            ]
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(io(dir))
}

pub fn export_result(r: &ScenarioResult, dir: &Path, format: TraceFormat) -> Result<ExportedFiles, HarnessError> {
    ensure_dir(dir)?;
    let trace = dir.join(format!("{}.trace.{}", r.name, format.extension()));
    write_trace(&r.trace, &trace, format)?;
    let metrics = dir.join(format!("{}.metrics.json", r.name));
    write_json(&MetricsFile::from_result(r), &metrics)?;
    let summary = dir.join(format!("{}.summary.csv", r.name));
    write_summary(&summary, &summary_rows("run", r, None))?;
    Ok(ExportedFiles { traces: vec![trace], metrics, summary })
}

pub fn export_ab(report: &AbReport, dir: &Path, format: TraceFormat) -> Result<ExportedFiles, HarnessError> {
    ensure_dir(dir)?;
    let mut traces = Vec::new();
    for r in [&report.baseline, &report.compensated] {
        let p = dir.join(format!("{}.trace.{}", r.name, format.extension()));
        write_trace(&r.trace, &p, format)?;
        traces.push(p);
    }
    let metrics = dir.join(format!("{}.ab.metrics.json", report.name));
    let file = AbMetricsFile {
        scenario: report.name.clone(),
        baseline: MetricsFile::from_result(&report.baseline),
        compensated: MetricsFile::from_result(&report.compensated),
        pairs: report.pairs.clone(),
    };
    write_json(&file, &metrics)?;
    let summary = dir.join(format!("{}.ab.summary.csv", report.name));
    let mut rows = summary_rows("baseline", &report.baseline, None);
    rows.extend(summary_rows("compensated", &report.compensated, Some(&report.pairs)));
    write_summary(&summary, &rows)?;
    Ok(ExportedFiles { traces, metrics, summary })
}

/// One row per scenario and signal, written after a sweep completes.
pub fn write_sweep_summary(results: &[&ScenarioResult], path: &Path) -> Result<(), HarnessError> {
    let mut rows = Vec::new();
    for r in results {
        rows.extend(summary_rows(&r.name, r, None));
    }
    write_summary(path, &rows)
}

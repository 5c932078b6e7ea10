// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV ingestion and JSON serialization of results and reports.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

use crate::data::{Dataset, DetectionResult, Segmentation};
use crate::detect::DetectorConfig;
use crate::error::{Result, SeglineError};

use super::ReplicationReport;

/// JSON schema of a single detection result.
pub const RESULT_SCHEMA: &str = include_str!("../../schema/result.schema.json");
/// JSON schema of a replication report.
pub const REPORT_SCHEMA: &str = include_str!("../../schema/report.schema.json");

/// Layout of an input CSV file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    pub has_header: bool,
    /// 0-based column holding the response; all others are predictors.
    pub response_column: usize,
    /// Prepend a constant-1 predictor column.
    pub intercept: bool,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: true,
            response_column: 0,
            intercept: false,
        }
    }
}

/// Reads a dataset, one observation per row.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| SeglineError::data(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut width = None;
    for (idx, rec) in reader.records().enumerate() {
        let line = idx + 1 + usize::from(opts.has_header);
        let rec = rec.map_err(|e| SeglineError::data(format!("line {line}: {e}")))?;
        if width.is_some_and(|w| w != rec.len()) {
            return Err(SeglineError::data(format!(
                "line {line}: expected {} fields",
                width.unwrap_or(0)
            )));
        }
        width = Some(rec.len());
        if opts.response_column >= rec.len() {
            return Err(SeglineError::data(format!(
                "line {line}: response column {} missing",
                opts.response_column
            )));
        }
        let mut row = Vec::with_capacity(rec.len() + 1);
        if opts.intercept {
            row.push(1.0);
        }
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| SeglineError::data(format!("line {line}, column {}: '{cell}' is not a number", c + 1)))?;
            if c == opts.response_column {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        if row.is_empty() {
            return Err(SeglineError::data(
                "no predictor columns; pass the intercept flag for a mean-shift model",
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(SeglineError::data("no observations"));
    }
    Dataset::from_rows(&rows, y).map_err(|e| SeglineError::data(e.to_string()))
}

/// Writes `y, x1, ..., xq` with a header, using shortest round-trip floats.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| SeglineError::data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let io_err = |e: csv::Error| SeglineError::data(e.to_string());
    let mut header = vec!["y".to_string()];
    header.extend((1..=data.q()).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(io_err)?;
    for i in 0..data.n() {
        let mut rec = vec![data.response(i).to_string()];
        rec.extend(data.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| SeglineError::data(e.to_string()))?;
    Ok(())
}

/// JSON document for one detection run. `timing = false` nulls the runtime
/// so that output is reproducible byte for byte.
pub fn result_json(
    result: &DetectionResult,
    data: &Dataset,
    seg: &Segmentation,
    config: &DetectorConfig,
    timing: bool,
) -> Value {
    json!({
        "algorithm": result.algorithm.as_str(),
        "n": data.n(),
        "q": data.q(),
        "p_n": seg.p_n,
        "m": seg.m,
        "K_hat": result.k_hat,
        "locations": result.locations,
        "boundary_hits": result.boundary_hits,
        "rss": result.rss,
        "runtime_s": if timing { json!(result.runtime_s) } else { Value::Null },
        "config": config,
        "diagnostics": result.diagnostics,
    })
}

/// JSON document for a replication report.
pub fn report_json(report: &ReplicationReport, timing: bool) -> Value {
    let mut v = serde_json::to_value(report).unwrap_or(Value::Null);
    if !timing {
        if let Some(algs) = v.get_mut("algorithms").and_then(Value::as_array_mut) {
            for a in algs {
                a["mean_runtime_s"] = Value::Null;
            }
        }
    }
    v
}

/// Pretty-prints `value` to `path`, or to standard output for `None`.
pub fn write_json(path: Option<&Path>, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| SeglineError::data(e.to_string()))?;
    match path {
        Some(p) => {
            std::fs::write(p, text + "\n").map_err(|e| SeglineError::data(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| SeglineError::data(e.to_string()))
        }
    }
}

//! Per-round trace records shared by every method, with JSON-lines and CSV
//! writers.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::RoundStats;

/// One round of any method. Primal-only methods leave `dual` and `gap` empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub h: u64,
    pub elapsed_ms_estimated: Option<f64>,
    pub dual: Option<f64>,
    pub primal: f64,
    pub gap: Option<f64>,
    pub dropped: Vec<usize>,
    pub theta: Option<Vec<f64>>,
}

impl From<&RoundStats> for TraceRecord {
    fn from(s: &RoundStats) -> Self {
        TraceRecord {
            h: s.h,
            elapsed_ms_estimated: None,
            dual: Some(s.dual),
            primal: s.primal,
            gap: Some(s.gap),
            dropped: s.dropped.clone(),
            theta: s.theta.clone(),
        }
    }
}

pub const CSV_HEADER: &str = "h,elapsed_ms_estimated,dual,primal,gap,dropped,theta";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl TraceRecord {
    /// CSV row; list fields are `;`-separated inside one column.
    pub fn csv_row(&self) -> String {
        let dropped: Vec<String> = self.dropped.iter().map(ToString::to_string).collect();
        let theta = self
            .theta
            .as_ref()
            .map(|t| t.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"))
            .unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.h,
            opt(self.elapsed_ms_estimated),
            opt(self.dual),
            self.primal,
            opt(self.gap),
            dropped.join(";"),
            theta
        )
    }
}

pub fn write_jsonl(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Trace(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

pub fn write_csv(records: &[TraceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{CSV_HEADER}").map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(out, "{}", r.csv_row()).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// First estimated time at which `value(record) ≤ target`.
pub fn time_to_target(
    records: &[TraceRecord],
    target: f64,
    value: impl Fn(&TraceRecord) -> Option<f64>,
) -> Option<f64> {
    records
        .iter()
        .find(|r| value(r).is_some_and(|v| v <= target))
        .and_then(|r| r.elapsed_ms_estimated)
}

//! Result files of a run:
//!
//! - `metrics.jsonl`: one [`JsonlRecord`] per round
//! - `table.csv`: final per-client accuracies, one row per run
//! - `table_marks.csv`: `best` / `second` per column of `table.csv`
//! - `config.resolved.toml`: the configuration with every default filled in
//! - `timing.csv`: wall-clock milliseconds per round, kept apart so the
//!   other files are reproducible byte for byte

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::ExperimentResult;
use crate::harness::metrics::MetricsRecord;
use crate::harness::HarnessError;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TABLE_FILE: &str = "table.csv";
pub const MARKS_FILE: &str = "table_marks.csv";
pub const CONFIG_FILE: &str = "config.resolved.toml";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRecord {
    /// Strategy tag plus active ablation switches.
    pub strategy: String,
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: MetricsRecord,
}

/// One row of the final table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub label: String,
    pub accuracy: Vec<f64>,
    pub avg: f64,
}

impl TableRow {
    pub fn from_record(label: impl Into<String>, rec: &MetricsRecord) -> Self {
        Self {
            label: label.into(),
            accuracy: rec.accuracy.clone(),
            avg: rec.avg_accuracy,
        }
    }

    fn columns(&self) -> impl Iterator<Item = f64> + '_ {
        self.accuracy.iter().copied().chain(std::iter::once(self.avg))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Best,
    Second,
    Unmarked,
}

impl Mark {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mark::Best => "best",
            Mark::Second => "second",
            Mark::Unmarked => "",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_metrics_jsonl(path: &Path, label: &str, seed: u64, log: &[MetricsRecord]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for rec in log {
        let line = JsonlRecord {
            strategy: label.to_string(),
            seed,
            metrics: rec.clone(),
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| HarnessError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_metrics_jsonl(path: &Path) -> Result<Vec<JsonlRecord>, HarnessError> {
    let r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| HarnessError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn header(clients: usize) -> Vec<String> {
    std::iter::once("strategy".to_string())
        .chain((0..clients).map(|i| format!("client_{i}")))
        .chain(std::iter::once("avg".to_string()))
        .collect()
}

fn clients_of(rows: &[TableRow]) -> Result<usize, HarnessError> {
    let n = rows.first().map_or(0, |r| r.accuracy.len());
    if rows.iter().any(|r| r.accuracy.len() != n) {
        return Err(HarnessError::TableShape);
    }
    Ok(n)
}

/// Reals are written in shortest round-trip form, so reading the table
/// back gives the exact values.
pub fn write_table_csv(path: &Path, rows: &[TableRow]) -> Result<(), HarnessError> {
    let n = clients_of(rows)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header(n)).map_err(csv_err(path))?;
    for r in rows {
        let rec: Vec<String> = std::iter::once(r.label.clone())
            .chain(r.columns().map(|v| v.to_string()))
            .collect();
        w.write_record(rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_table_csv(path: &Path) -> Result<Vec<TableRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| HarnessError::Csv {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        let (avg, acc) = vals.split_last().ok_or(HarnessError::TableShape)?;
        rows.push(TableRow {
            label: rec.get(0).unwrap_or_default().to_string(),
            accuracy: acc.to_vec(),
            avg: *avg,
        });
    }
    Ok(rows)
}

/// Per column, every row holding the maximum is `best`; every row holding
/// the largest value below it is `second`. Ties are marked jointly.
pub fn table_marks(rows: &[TableRow]) -> Result<Vec<Vec<Mark>>, HarnessError> {
    let n = clients_of(rows)? + 1;
    let cols: Vec<Vec<f64>> = rows.iter().map(|r| r.columns().collect()).collect();
    let mut marks = vec![vec![Mark::Unmarked; n]; rows.len()];
    for c in 0..n {
        let best = cols.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max);
        let second = cols
            .iter()
            .map(|r| r[c])
            .filter(|&v| v < best)
            .fold(f64::NEG_INFINITY, f64::max);
        for (r, row) in cols.iter().enumerate() {
            if row[c] == best {
                marks[r][c] = Mark::Best;
            } else if row[c] == second {
                marks[r][c] = Mark::Second;
            }
        }
    }
    Ok(marks)
}

pub fn write_marks_csv(path: &Path, rows: &[TableRow]) -> Result<(), HarnessError> {
    let marks = table_marks(rows)?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header(clients_of(rows)?)).map_err(csv_err(path))?;
    for (r, m) in rows.iter().zip(marks) {
        let rec: Vec<String> = std::iter::once(r.label.clone())
            .chain(m.iter().map(|k| k.as_str().to_string()))
            .collect();
        w.write_record(rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes `table.csv` and `table_marks.csv` for a set of runs.
pub fn emit_table(dir: &Path, rows: &[TableRow]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_table_csv(&dir.join(TABLE_FILE), rows)?;
    write_marks_csv(&dir.join(MARKS_FILE), rows)
}

pub fn write_resolved_config(path: &Path, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    fs::write(path, cfg.to_toml()).map_err(io_err(path))
}

pub fn write_timing(path: &Path, log: &[MetricsRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["round", "wall_clock_ms"]).map_err(csv_err(path))?;
    for r in log {
        w.write_record([r.round.to_string(), r.wall_clock_ms.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes every result file of one run into `dir` and returns the paths.
pub fn emit_results<S>(dir: &Path, result: &ExperimentResult<S>) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let cfg = &result.config;
    let label = cfg.run_label();
    let seed = cfg.seed()?;
    let paths: Vec<PathBuf> = [METRICS_FILE, TABLE_FILE, MARKS_FILE, CONFIG_FILE, TIMING_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_metrics_jsonl(&paths[0], &label, seed, &result.log)?;
    let rows: Vec<TableRow> = result
        .final_record()
        .map(|r| TableRow::from_record(label.clone(), r))
        .into_iter()
        .collect();
    write_table_csv(&paths[1], &rows)?;
    write_marks_csv(&paths[2], &rows)?;
    write_resolved_config(&paths[3], cfg)?;
    write_timing(&paths[4], &result.log)?;
    Ok(paths)
}

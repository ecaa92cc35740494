//! Metrics rows and their CSV form.
//!
//! Columns: `experiment, method, seed, epoch, split, loss, accuracy_whole,
//! accuracy_part1..accuracy_partK, param_count, wall_seconds`, plus a final
//! `status` column in ablation files. `K` is the largest part count among
//! the rows of one file; absent values are empty fields. Floats use Rust's
//! shortest round-trip formatting, so equal values always print equally.

use std::io::Write;
use std::path::Path;

use kamal_core::{Split, TrainLog};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Ensemble,
    Baseline,
    Layerwise,
    Joint,
    /// Teacher training curves.
    Teacher,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ensemble => "ensemble",
            Method::Baseline => "baseline",
            Method::Layerwise => "layerwise",
            Method::Joint => "joint",
            Method::Teacher => "teacher",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub experiment: String,
    pub method: Method,
    pub seed: u64,
    pub epoch: usize,
    pub split: Split,
    pub loss: Option<f64>,
    pub accuracy_whole: Option<f64>,
    pub accuracy_parts: Vec<f64>,
    pub param_count: Option<usize>,
    pub wall_seconds: Option<f64>,
    pub status: Option<Status>,
}

impl MetricsRow {
    pub fn new(experiment: impl Into<String>, method: Method, seed: u64, epoch: usize, split: Split) -> Self {
        MetricsRow {
            experiment: experiment.into(),
            method,
            seed,
            epoch,
            split,
            loss: None,
            accuracy_whole: None,
            accuracy_parts: Vec::new(),
            param_count: None,
            wall_seconds: None,
            status: None,
        }
    }
}

/// One row per record of `log`, epoch-0 records first.
pub fn log_rows(
    experiment: &str,
    method: Method,
    seed: u64,
    log: &TrainLog,
    param_count: Option<usize>,
) -> Vec<MetricsRow> {
    log.initial
        .iter()
        .chain(&log.records)
        .map(|r| MetricsRow {
            loss: Some(r.loss),
            accuracy_whole: r.accuracy_whole,
            accuracy_parts: r.accuracy_parts.clone(),
            param_count,
            ..MetricsRow::new(experiment, method, seed, r.epoch, r.split)
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Render rows as CSV bytes (LF line endings, header first).
pub fn to_csv(rows: &[MetricsRow], with_status: bool) -> Vec<u8> {
    let parts = rows.iter().map(|r| r.accuracy_parts.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header: Vec<String> = [
        "experiment",
        "method",
        "seed",
        "epoch",
        "split",
        "loss",
        "accuracy_whole",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=parts).map(|i| format!("accuracy_part{i}")));
    header.push("param_count".into());
    header.push("wall_seconds".into());
    if with_status {
        header.push("status".into());
    }
    w.write_record(&header).expect("in-memory write");
    for r in rows {
        let mut rec = vec![
            r.experiment.clone(),
            r.method.as_str().to_string(),
            r.seed.to_string(),
            r.epoch.to_string(),
            r.split.as_str().to_string(),
            opt(r.loss),
            opt(r.accuracy_whole),
        ];
        rec.extend((0..parts).map(|i| opt(r.accuracy_parts.get(i))));
        rec.push(opt(r.param_count));
        rec.push(opt(r.wall_seconds));
        if with_status {
            rec.push(
                match r.status {
                    Some(Status::Ok) => "ok",
                    Some(Status::Failed) => "failed",
                    None => "",
                }
                .to_string(),
            );
        }
        w.write_record(&rec).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_csv(path: &Path, rows: &[MetricsRow], with_status: bool) -> Result<()> {
    let bytes = to_csv(rows, with_status);
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

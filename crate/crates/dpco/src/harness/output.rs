//! Per-run CSVs, cross-run aggregation and the JSON summary.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{MetricRow, COLUMNS};
use crate::schedules::Certificate;

pub const SCHEMA_VERSION: u32 = 1;

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the fixed nine-column layout; missing values are empty cells.
pub fn write_rows<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.k.to_string()];
        rec.extend(r.values().iter().map(|v| cell(*v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<MetricRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != COLUMNS {
        return Err(HarnessError::Csv(format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let k = rec[0].parse().map_err(|e| HarnessError::Csv(format!("bad k: {e}")))?;
        let mut values = [None; 8];
        for (j, v) in values.iter_mut().enumerate() {
            let s = &rec[j + 1];
            if !s.is_empty() {
                *v = Some(s.parse().map_err(|e| HarnessError::Csv(format!("bad value {s:?}: {e}")))?);
            }
        }
        rows.push(MetricRow::from_values(k, values));
    }
    Ok(rows)
}

/// Mean, sample variance (`n − 1`) and median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// `None` with a single sample.
    pub variance: Option<f64>,
    pub median: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Stats> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = (n > 1).then(|| values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64);
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
        Some(Stats { n, mean, variance, median })
    }
}

/// Statistics of every value column at one `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub k: usize,
    pub columns: [Option<Stats>; 8],
}

/// Column-wise statistics across runs, matched by `k`.
pub fn aggregate(runs: &[Vec<MetricRow>]) -> Vec<AggregateRow> {
    let mut by_k: BTreeMap<usize, [Vec<f64>; 8]> = BTreeMap::new();
    for rows in runs {
        for r in rows {
            let slot = by_k.entry(r.k).or_default();
            for (j, v) in r.values().iter().enumerate() {
                if let Some(v) = v {
                    slot[j].push(*v);
                }
            }
        }
    }
    by_k.into_iter()
        .map(|(k, cols)| AggregateRow { k, columns: std::array::from_fn(|j| Stats::of(&cols[j])) })
        .collect()
}

pub fn aggregate_header() -> Vec<String> {
    let mut h = vec!["k".to_owned(), "runs".to_owned()];
    for c in &COLUMNS[1..] {
        for s in ["mean", "var", "median"] {
            h.push(format!("{c}_{s}"));
        }
    }
    h
}

pub fn write_aggregate<W: Write>(out: W, rows: &[AggregateRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(aggregate_header())?;
    for r in rows {
        let runs = r.columns.iter().flatten().map(|s| s.n).max().unwrap_or(0);
        let mut rec = vec![r.k.to_string(), runs.to_string()];
        for s in &r.columns {
            rec.push(cell(s.map(|s| s.mean)));
            rec.push(cell(s.and_then(|s| s.variance)));
            rec.push(cell(s.map(|s| s.median)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

/// Joined mean/variance error columns, one pair per method.
pub fn write_comparison<W: Write>(out: W, methods: &[(&str, Vec<AggregateRow>)]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["k".to_owned()];
    for (name, _) in methods {
        header.push(format!("{name}_err_mean"));
        header.push(format!("{name}_err_var"));
    }
    w.write_record(&header)?;
    let mut ks: Vec<usize> = methods.iter().flat_map(|(_, rows)| rows.iter().map(|r| r.k)).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let mut rec = vec![k.to_string()];
        for (_, rows) in methods {
            let s = rows.iter().find(|r| r.k == k).and_then(|r| r.columns[0]);
            rec.push(cell(s.map(|s| s.mean)));
            rec.push(cell(s.and_then(|s| s.variance)));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| HarnessError::Io(e.to_string()))?;
    Ok(())
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    pub final_err_x: Option<f64>,
    pub final_eps_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accountant_error: Option<String>,
}

/// Top-level JSON written next to the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mode: String,
    pub config_hash: String,
    pub base_seed: u64,
    pub horizon: usize,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub completed: usize,
    pub failed: usize,
    pub runs: Vec<RunRecord>,
    /// Statistics of the final `err_x` over completed runs, per method.
    pub final_error: BTreeMap<String, Stats>,
    /// `ε̂_K` of the first completed run per method (identical across seeds).
    pub eps_hat: BTreeMap<String, f64>,
    pub certificates: Vec<Certificate>,
    /// Mode-specific details.
    pub details: serde_json::Value,
}

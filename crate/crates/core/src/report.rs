//! Cross-run comparison tables, merged wealth curves and quarterly returns.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::metrics::{EquityCurve, MetricsReport};
use crate::{Error, Result};

pub const RUN_INFO: &str = "run.json";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const EQUITY_CSV: &str = "equity.csv";
pub const TRACE_JSONL: &str = "trace.jsonl";

/// Self-description written into every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub command: String,
    pub strategy: String,
    pub seed: u64,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunInfo {
    pub fn new(command: &str, strategy: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            strategy: strategy.to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            split: None,
            warnings: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub info: RunInfo,
    pub metrics: MetricsReport,
    pub curve: EquityCurve,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.is_file() {
        return Err(Error::MissingArtifacts(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Artifact {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_run(dir: &Path) -> Result<RunArtifacts> {
    let info: RunInfo = read_json(&dir.join(RUN_INFO))?;
    let metrics: MetricsReport = read_json(&dir.join(METRICS_JSON))?;
    let equity = dir.join(EQUITY_CSV);
    if !equity.is_file() {
        return Err(Error::MissingArtifacts(equity));
    }
    Ok(RunArtifacts {
        dir: dir.to_path_buf(),
        info,
        metrics,
        curve: EquityCurve::read_csv(&equity)?,
    })
}

pub const SUMMARY_METRICS: [&str; 6] = [
    "cumulative_return_pct",
    "annualized_return_pct",
    "sharpe",
    "calmar",
    "annual_volatility_pct",
    "max_drawdown_pct",
];

/// Mean and sample standard deviation (0 for a single run) of one metric.
/// Undefined values (zero dispersion, zero drawdown) are left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return MeanStd { mean: None, std: None, n: 0 };
    }
    let std = if v.len() == 1 { 0.0 } else { crate::stats::sample_std(&v) };
    MeanStd {
        mean: Some(crate::stats::mean(&v)),
        std: Some(std),
        n: v.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MeanStd>,
}

pub fn summarize(runs: &[RunArtifacts]) -> Vec<StrategySummary> {
    let mut groups: BTreeMap<&str, Vec<&RunArtifacts>> = BTreeMap::new();
    for r in runs {
        groups.entry(r.info.strategy.as_str()).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(strategy, rs)| {
            let rows: Vec<[f64; 7]> = rs.iter().map(|r| r.metrics.row()).collect();
            let metrics = SUMMARY_METRICS
                .iter()
                .enumerate()
                .map(|(k, name)| (name.to_string(), mean_std(&rows.iter().map(|r| r[k]).collect::<Vec<_>>())))
                .collect();
            StrategySummary {
                strategy: strategy.to_string(),
                runs: rs.len(),
                seeds: rs.iter().map(|r| r.info.seed).collect(),
                metrics,
            }
        })
        .collect()
}

pub fn summary_csv(summaries: &[StrategySummary]) -> String {
    let mut out = String::from("strategy,runs");
    for m in SUMMARY_METRICS {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for s in summaries {
        out.push_str(&format!("{},{}", s.strategy, s.runs));
        for m in SUMMARY_METRICS {
            let ms = s.metrics[m];
            out.push_str(&format!(",{},{}", fmt(ms.mean), fmt(ms.std)));
        }
        out.push('\n');
    }
    out
}

/// Calendar-quarter label such as `2020Q3`.
pub fn quarter_label(d: NaiveDate) -> String {
    format!("{}Q{}", d.year(), (d.month0() / 3) + 1)
}

/// Compounded return per calendar quarter, `prod(1 + r) - 1`, with each daily
/// return assigned to the quarter of the date it is realized on.
pub fn quarterly_returns(curve: &EquityCurve) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    for (k, r) in curve.returns().iter().enumerate() {
        let q = quarter_label(curve.dates[k + 1]);
        match out.last_mut() {
            Some((label, growth)) if *label == q => *growth *= 1.0 + r,
            _ => out.push((q, 1.0 + r)),
        }
    }
    out.into_iter().map(|(q, g)| (q, g - 1.0)).collect()
}

fn run_labels(runs: &[RunArtifacts]) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    runs.iter()
        .map(|r| {
            let base = format!("{}-seed{}", r.info.strategy, r.info.seed);
            let count = seen.entry(base.clone()).or_insert(0);
            *count += 1;
            if *count == 1 {
                base
            } else {
                format!("{base}-{count}")
            }
        })
        .collect()
}

/// Wealth of every run on the union of their dates; blank where a run has no value.
pub fn merged_wealth_csv(runs: &[RunArtifacts]) -> String {
    let labels = run_labels(runs);
    let mut table: BTreeMap<NaiveDate, Vec<Option<f64>>> = BTreeMap::new();
    for (k, r) in runs.iter().enumerate() {
        for (d, w) in r.curve.dates.iter().zip(&r.curve.wealth) {
            table.entry(*d).or_insert_with(|| vec![None; runs.len()])[k] = Some(*w);
        }
    }
    let mut out = format!("date,{}\n", labels.join(","));
    for (d, row) in table {
        out.push_str(&d.format(crate::data::DATE_FORMAT).to_string());
        for v in row {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&v.to_string());
            }
        }
        out.push('\n');
    }
    out
}

pub fn quarterly_csv(runs: &[RunArtifacts]) -> String {
    let mut out = String::from("run,strategy,seed,quarter,return_pct\n");
    for (label, r) in run_labels(runs).iter().zip(runs) {
        for (q, ret) in quarterly_returns(&r.curve) {
            out.push_str(&format!("{label},{},{},{q},{}\n", r.info.strategy, r.info.seed, ret * 100.0));
        }
    }
    out
}

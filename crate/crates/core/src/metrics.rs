//! Equity curves and the six performance metrics.
//!
//! Conventions: 252 trading days per year, sample standard deviation, zero
//! risk-free rate unless given. Returns and volatility are reported in percent,
//! the maximum drawdown as a fraction and Calmar as annualized return over
//! maximum drawdown.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DATE_FORMAT;
use crate::stats;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("equity curve is empty")]
    Empty,
    #[error("equity curve has {len} points, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("returns have zero dispersion")]
    ZeroDispersion,
    #[error("curve has no drawdown")]
    ZeroDrawdown,
    #[error("wealth must be positive and finite, got {value} at index {index}")]
    NonPositiveWealth { index: usize, value: f64 },
    #[error("dates and wealth lengths differ ({dates} vs {wealth})")]
    LengthMismatch { dates: usize, wealth: usize },
    #[error("malformed equity file {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MetricsError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub dates: Vec<NaiveDate>,
    pub wealth: Vec<f64>,
}

impl EquityCurve {
    pub fn new(dates: Vec<NaiveDate>, wealth: Vec<f64>) -> Result<Self> {
        if dates.len() != wealth.len() {
            return Err(MetricsError::LengthMismatch {
                dates: dates.len(),
                wealth: wealth.len(),
            });
        }
        if let Some((index, &value)) = wealth.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(MetricsError::NonPositiveWealth { index, value });
        }
        Ok(Self { dates, wealth })
    }

    pub fn len(&self) -> usize {
        self.wealth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wealth.is_empty()
    }

    /// Per-period simple returns `w_t / w_{t-1} - 1`.
    pub fn returns(&self) -> Vec<f64> {
        self.wealth.windows(2).map(|w| w[1] / w[0] - 1.0).collect()
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            dates: self.dates[start..end].to_vec(),
            wealth: self.wealth[start..end].to_vec(),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = String::from("date,wealth\n");
        for (d, w) in self.dates.iter().zip(&self.wealth) {
            out.push_str(&format!("{},{}\n", d.format(DATE_FORMAT), w));
        }
        std::fs::write(path, out).map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let malformed = |message: String| MetricsError::Malformed {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut lines = text.lines();
        if lines.next() != Some("date,wealth") {
            return Err(malformed("missing date,wealth header".into()));
        }
        let (mut dates, mut wealth) = (Vec::new(), Vec::new());
        for (k, line) in lines.enumerate() {
            let (d, w) = line
                .split_once(',')
                .ok_or_else(|| malformed(format!("line {}: expected two fields", k + 2)))?;
            dates.push(
                NaiveDate::parse_from_str(d, DATE_FORMAT).map_err(|e| malformed(format!("line {}: {e}", k + 2)))?,
            );
            wealth.push(w.parse().map_err(|e| malformed(format!("line {}: {e}", k + 2)))?);
        }
        Self::new(dates, wealth)
    }
}

fn need(curve: &EquityCurve, points: usize) -> Result<()> {
    match curve.len() {
        0 => Err(MetricsError::Empty),
        len if len < points => Err(MetricsError::TooShort { len, needed: points }),
        _ => Ok(()),
    }
}

/// `W_T / W_0 - 1`, in percent.
pub fn cumulative_return(curve: &EquityCurve) -> Result<f64> {
    need(curve, 1)?;
    Ok((curve.wealth[curve.len() - 1] / curve.wealth[0] - 1.0) * 100.0)
}

/// `(W_T / W_0)^(252 / T) - 1` with `T` the number of daily returns, in percent.
pub fn annualized_return(curve: &EquityCurve) -> Result<f64> {
    need(curve, 2)?;
    let growth = curve.wealth[curve.len() - 1] / curve.wealth[0];
    let periods = (curve.len() - 1) as f64;
    Ok((growth.powf(TRADING_DAYS_PER_YEAR / periods) - 1.0) * 100.0)
}

/// `sqrt(252) * mean(r - rf) / std(r)`.
pub fn sharpe_annual(curve: &EquityCurve, risk_free: f64) -> Result<f64> {
    need(curve, 3)?;
    let r = curve.returns();
    let sd = stats::sample_std(&r);
    if sd < stats::ZERO_DISPERSION {
        return Err(MetricsError::ZeroDispersion);
    }
    let excess = r.iter().map(|x| x - risk_free).sum::<f64>() / r.len() as f64;
    Ok(TRADING_DAYS_PER_YEAR.sqrt() * excess / sd)
}

/// Largest peak-to-trough loss as a fraction of the peak.
pub fn max_drawdown(curve: &EquityCurve) -> Result<f64> {
    need(curve, 1)?;
    let mut peak = curve.wealth[0];
    let mut worst: f64 = 0.0;
    for &w in &curve.wealth {
        peak = peak.max(w);
        worst = worst.max((peak - w) / peak);
    }
    Ok(worst)
}

/// `sqrt(252) * std(r)`, in percent.
pub fn annual_volatility(curve: &EquityCurve) -> Result<f64> {
    need(curve, 3)?;
    Ok(TRADING_DAYS_PER_YEAR.sqrt() * stats::sample_std(&curve.returns()) * 100.0)
}

/// Annualized return over maximum drawdown (both as fractions).
pub fn calmar(curve: &EquityCurve) -> Result<f64> {
    let mdd = max_drawdown(curve)?;
    if mdd <= 0.0 {
        return Err(MetricsError::ZeroDrawdown);
    }
    Ok(calmar_from(annualized_return(curve)?, mdd * 100.0))
}

/// Calmar from an annualized return and a maximum drawdown in the same unit.
pub fn calmar_from(annualized: f64, max_drawdown: f64) -> f64 {
    annualized / max_drawdown
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cumulative_return_pct: f64,
    pub annualized_return_pct: f64,
    /// `None` when returns have zero dispersion.
    pub sharpe: Option<f64>,
    /// `None` when the curve never draws down (`zero_drawdown` is set).
    pub calmar: Option<f64>,
    pub zero_drawdown: bool,
    pub annual_volatility_pct: f64,
    /// Fraction in `[0, 1)`.
    pub max_drawdown: f64,
    pub trading_days_per_year: u32,
    pub periods: usize,
}

pub const CSV_COLUMNS: [&str; 7] = [
    "cumulative_return_pct",
    "annualized_return_pct",
    "sharpe",
    "calmar",
    "annual_volatility_pct",
    "max_drawdown_pct",
    "periods",
];

impl MetricsReport {
    pub fn compute(curve: &EquityCurve, risk_free: f64) -> Result<Self> {
        need(curve, 3)?;
        let sharpe = match sharpe_annual(curve, risk_free) {
            Ok(s) => Some(s),
            Err(MetricsError::ZeroDispersion) => None,
            Err(e) => return Err(e),
        };
        let (calmar, zero_drawdown) = match calmar(curve) {
            Ok(c) => (Some(c), false),
            Err(MetricsError::ZeroDrawdown) => (None, true),
            Err(e) => return Err(e),
        };
        Ok(Self {
            cumulative_return_pct: cumulative_return(curve)?,
            annualized_return_pct: annualized_return(curve)?,
            sharpe,
            calmar,
            zero_drawdown,
            annual_volatility_pct: annual_volatility(curve)?,
            max_drawdown: max_drawdown(curve)?,
            trading_days_per_year: TRADING_DAYS_PER_YEAR as u32,
            periods: curve.len() - 1,
        })
    }

    /// Values in [`CSV_COLUMNS`] order; undefined ratios are `NaN`, an absent
    /// drawdown gives an infinite Calmar.
    pub fn row(&self) -> [f64; 7] {
        [
            self.cumulative_return_pct,
            self.annualized_return_pct,
            self.sharpe.unwrap_or(f64::NAN),
            match (self.calmar, self.zero_drawdown) {
                (Some(c), _) => c,
                (None, true) => f64::INFINITY,
                (None, false) => f64::NAN,
            },
            self.annual_volatility_pct,
            self.max_drawdown * 100.0,
            self.periods as f64,
        ]
    }

    pub fn csv(&self, strategy: &str) -> String {
        let mut out = format!("strategy,{}\n{strategy}", CSV_COLUMNS.join(","));
        for v in self.row() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
        out
    }
}

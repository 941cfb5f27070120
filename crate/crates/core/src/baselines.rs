//! Benchmark strategies: long-only mean-variance, follow-the-winner,
//! follow-the-loser and an index buy-and-hold reference curve.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::data::ReturnPanel;
use crate::indicators::rolling_covariance;
use crate::metrics::EquityCurve;

pub const MAX_ITERATIONS: usize = 10_000;
pub const CONVERGENCE_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("covariance matrix is not positive semidefinite (eigenvalue {0})")]
    NotPsd(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("need {need} prior return rows, have {have}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("series has {len} points, need at least {needed}")]
    TooShort { len: usize, needed: usize },
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvoSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `weights` is then the last iterate.
    pub converged: bool,
}

pub fn mvo_objective(mu: &[f64], sigma: &DMatrix<f64>, risk_aversion: f64, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    DVector::from_column_slice(mu).dot(&w) - risk_aversion * (w.transpose() * sigma * &w)[(0, 0)]
}

/// Maximizes `mu' w - lambda w' Sigma w` over the simplex by projected gradient
/// ascent with step `1 / L`, `L = 2 lambda lambda_max(Sigma)`.
pub fn mvo_weights(mu: &[f64], sigma: &DMatrix<f64>, risk_aversion: f64) -> Result<MvoSolution> {
    let n = mu.len();
    if n == 0 || sigma.nrows() != n || sigma.ncols() != n {
        return Err(BaselineError::InvalidInput(format!(
            "mu has {n} entries, sigma is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !(risk_aversion > 0.0 && risk_aversion.is_finite()) {
        return Err(BaselineError::InvalidInput(format!("risk aversion {risk_aversion}")));
    }
    if mu.iter().chain(sigma.iter()).any(|x| !x.is_finite()) {
        return Err(BaselineError::InvalidInput("non-finite mu or sigma".into()));
    }
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.max();
    let min_eig = eig.eigenvalues.min();
    if min_eig < -PSD_TOL * max_eig.abs().max(1.0) {
        return Err(BaselineError::NotPsd(min_eig));
    }
    let lipschitz = 2.0 * risk_aversion * max_eig;
    let step = if lipschitz > 1e-300 { 1.0 / lipschitz } else { 1.0 };
    let mu_v = DVector::from_column_slice(mu);
    let mut w = vec![1.0 / n as f64; n];
    for it in 1..=MAX_ITERATIONS {
        let wv = DVector::from_column_slice(&w);
        let grad = &mu_v - (&sym * &wv) * (2.0 * risk_aversion);
        let proposal: Vec<f64> = w.iter().zip(grad.iter()).map(|(x, g)| x + step * g).collect();
        let next = project_simplex(&proposal);
        let moved = next.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        w = next;
        if moved < CONVERGENCE_TOL {
            return Ok(MvoSolution {
                objective: mvo_objective(mu, &sym, risk_aversion, &w),
                weights: w,
                iterations: it,
                converged: true,
            });
        }
    }
    log::warn!("mean-variance solver hit {MAX_ITERATIONS} iterations without converging");
    Ok(MvoSolution {
        objective: mvo_objective(mu, &sym, risk_aversion, &w),
        weights: w,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}

/// Sample mean and covariance of return rows `[t - window, t)`.
pub fn trailing_moments(returns: &ReturnPanel, t: usize, window: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if t < window || t > returns.len() || window < 2 {
        return Err(BaselineError::InsufficientHistory { have: t, need: window });
    }
    let n = returns.n_assets();
    let mut mu = vec![0.0; n];
    for k in t - window..t {
        for (m, r) in mu.iter_mut().zip(returns.row(k)) {
            *m += r / window as f64;
        }
    }
    let cov = rolling_covariance(returns, window, t)
        .map_err(|e| BaselineError::InvalidInput(e.to_string()))?;
    Ok((mu, DMatrix::from_row_slice(n, n, &cov.matrix)))
}

fn one_hot(n: usize, i: usize) -> Vec<f64> {
    let mut w = vec![0.0; n];
    w[i] = 1.0;
    w
}

/// All weight on the best previous-period return; ties go to the lowest index.
pub fn follow_winner(previous: &[f64]) -> Result<Vec<f64>> {
    pick(previous, |a, b| a > b)
}

/// All weight on the worst previous-period return; ties go to the lowest index.
pub fn follow_loser(previous: &[f64]) -> Result<Vec<f64>> {
    pick(previous, |a, b| a < b)
}

fn pick(previous: &[f64], better: impl Fn(f64, f64) -> bool) -> Result<Vec<f64>> {
    if previous.is_empty() {
        return Err(BaselineError::InsufficientHistory { have: 0, need: 1 });
    }
    let mut best = 0;
    for (i, &r) in previous.iter().enumerate().skip(1) {
        if better(r, previous[best]) {
            best = i;
        }
    }
    Ok(one_hot(previous.len(), best))
}

/// Buy-and-hold curve of an index: `capital * close_t / close_0`, no costs.
pub fn index_hold(dates: &[NaiveDate], closes: &[f64], capital: f64) -> Result<EquityCurve> {
    if closes.len() < 2 || dates.len() != closes.len() {
        return Err(BaselineError::TooShort {
            len: closes.len().min(dates.len()),
            needed: 2,
        });
    }
    let base = closes[0];
    EquityCurve::new(dates.to_vec(), closes.iter().map(|c| capital * c / base).collect())
        .map_err(|e| BaselineError::InvalidInput(e.to_string()))
}

/// Price-weighted index built from several close series (sum of closes).
pub fn price_weighted_index(closes: &[Vec<f64>]) -> Vec<f64> {
    let len = closes.first().map(Vec::len).unwrap_or(0);
    (0..len).map(|t| closes.iter().map(|c| c[t]).sum()).collect()
}

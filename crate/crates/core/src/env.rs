//! The trading environment: state assembly, turnover-proportional costs,
//! wealth evolution and the trailing-Sharpe (SR60) reward.
//!
//! Timeline: the decision at price row `t` sees rows `<= t`, holds the chosen
//! weights from close `t` to close `t + 1` and earns return row `t`.

use std::collections::VecDeque;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{compute_returns, DataError, PricePanel, ReturnPanel};
use crate::indicators::{
    rolling_covariance, IndicatorBlock, IndicatorError, COVARIANCE_WINDOW, INDICATORS_PER_ASSET,
};
use crate::stats;

/// OHLCV, daily return and the eight indicators.
pub const FEATURES_PER_ASSET: usize = 6 + INDICATORS_PER_ASSET;

pub const DEFAULT_TRANSACTION_COST: f64 = 0.0005;
pub const DEFAULT_REWARD_WINDOW: usize = 60;
pub const DEFAULT_INITIAL_CAPITAL: f64 = 1_000_000.0;

const SIMPLEX_TOL: f64 = 1e-6;
const NEGATIVE_TOL: f64 = 1e-9;
const NORM_CLIP: f64 = 10.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("warm-up incomplete: decisions start at row {start} but row {needed} is the first with every feature defined")]
    WarmupIncomplete { start: usize, needed: usize },
    #[error("weights not on the simplex (sum {sum}, min {min})")]
    NotOnSimplex { sum: f64, min: f64 },
    #[error("episode is done")]
    EpisodeDone,
    #[error("insufficient history: {have} returns, need {need}")]
    InsufficientHistory { have: usize, need: usize },
    #[error("normalization statistics have not been fitted")]
    StatsNotFitted,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("explored asset index {index} out of range for {m} extended assets")]
    UnknownExtendedAsset { index: usize, m: usize },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Proportional cost per unit of turnover.
    pub transaction_cost: f64,
    pub reward_window: usize,
    pub initial_capital: f64,
    /// First decision row; earlier rows only warm up indicators.
    pub warmup: usize,
    pub risk_free: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            transaction_cost: DEFAULT_TRANSACTION_COST,
            reward_window: DEFAULT_REWARD_WINDOW,
            initial_capital: DEFAULT_INITIAL_CAPITAL,
            warmup: crate::data::DEFAULT_WARMUP,
            risk_free: 0.0,
        }
    }
}

/// Observation at row `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub t: usize,
    /// Per asset `FEATURES_PER_ASSET` values, then the covariance upper triangle.
    pub features: Vec<f64>,
    /// Latest daily returns of the extended universe (the DQN view only).
    pub extended_returns: Vec<f64>,
}

impl MarketState {
    /// The existing-universe view used by the allocation agent.
    pub fn base(&self) -> &[f64] {
        &self.features
    }

    /// Base view with extended-universe returns appended.
    pub fn augmented(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.features.len() + self.extended_returns.len());
        v.extend_from_slice(&self.features);
        v.extend_from_slice(&self.extended_returns);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.features.iter().chain(&self.extended_returns).all(|x| x.is_finite())
    }
}

pub fn base_state_dim(n: usize) -> usize {
    n * FEATURES_PER_ASSET + n * (n + 1) / 2
}

/// Per-feature z-score statistics fitted on the training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Fits over the augmented view of `states`.
    pub fn fit(states: &[MarketState]) -> Result<Self> {
        let Some(first) = states.first() else {
            return Err(EnvError::StatsNotFitted);
        };
        let dim = first.features.len() + first.extended_returns.len();
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        let cols: Vec<Vec<f64>> = states.iter().map(|s| s.augmented()).collect();
        for k in 0..dim {
            let column: Vec<f64> = cols.iter().map(|c| c[k]).collect();
            mean[k] = stats::mean(&column);
            std[k] = stats::population_std(&column);
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, raw: &MarketState) -> Result<MarketState> {
        let nb = raw.features.len();
        let total = nb + raw.extended_returns.len();
        if total != self.mean.len() {
            return Err(EnvError::DimensionMismatch {
                expected: self.mean.len(),
                got: total,
            });
        }
        let z = |k: usize, x: f64| {
            if self.std[k] < stats::ZERO_DISPERSION {
                0.0
            } else {
                ((x - self.mean[k]) / self.std[k]).clamp(-NORM_CLIP, NORM_CLIP)
            }
        };
        Ok(MarketState {
            t: raw.t,
            features: raw.features.iter().enumerate().map(|(k, &x)| z(k, x)).collect(),
            extended_returns: raw
                .extended_returns
                .iter()
                .enumerate()
                .map(|(k, &x)| z(nb + k, x))
                .collect(),
        })
    }
}

/// Normalizes with `stats`, failing when none were fitted.
pub fn normalize_state(raw: &MarketState, stats: Option<&NormStats>) -> Result<MarketState> {
    stats.ok_or(EnvError::StatsNotFitted)?.normalize(raw)
}

/// Ring buffer of the most recent portfolio returns.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWindow {
    returns: VecDeque<f64>,
    capacity: usize,
    pub risk_free: f64,
}

impl RewardWindow {
    pub fn new(capacity: usize, risk_free: f64) -> Self {
        Self {
            returns: VecDeque::with_capacity(capacity),
            capacity,
            risk_free,
        }
    }

    pub fn push(&mut self, r: f64) {
        if self.returns.len() == self.capacity {
            self.returns.pop_front();
        }
        self.returns.push_back(r);
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn values(&self) -> Vec<f64> {
        self.returns.iter().copied().collect()
    }
}

/// Per-period Sharpe of the buffered returns; 0 when their dispersion vanishes.
pub fn sharpe_window(window: &RewardWindow) -> Result<f64> {
    stats::sharpe(&window.values(), window.risk_free).ok_or(EnvError::InsufficientHistory {
        have: window.len(),
        need: 2,
    })
}

/// Target weights for one period: the existing universe plus at most one
/// explored extended asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub existing: Vec<f64>,
    /// `(extended asset index, weight)`.
    pub explored: Option<(usize, f64)>,
}

impl Allocation {
    pub fn existing_only(weights: Vec<f64>) -> Self {
        Self {
            existing: weights,
            explored: None,
        }
    }

    pub fn explored_weight(&self) -> f64 {
        self.explored.map(|(_, w)| w).unwrap_or(0.0)
    }

    /// Existing weights followed by the explored slot.
    pub fn executed(&self) -> Vec<f64> {
        let mut v = self.existing.clone();
        v.push(self.explored_weight());
        v
    }

    fn sum_and_min(&self) -> (f64, f64) {
        let sum = self.existing.iter().sum::<f64>() + self.explored_weight();
        let min = self
            .existing
            .iter()
            .copied()
            .chain(self.explored.map(|(_, w)| w))
            .fold(f64::INFINITY, f64::min);
        (sum, min)
    }

    pub fn check_simplex(&self) -> Result<()> {
        let (sum, min) = self.sum_and_min();
        if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || min < -NEGATIVE_TOL {
            return Err(EnvError::NotOnSimplex { sum, min });
        }
        Ok(())
    }

    /// Clamps round-off negatives and rescales onto the simplex exactly.
    fn cleaned(&self) -> Allocation {
        let existing: Vec<f64> = self.existing.iter().map(|w| w.max(0.0)).collect();
        let explored = self.explored.map(|(i, w)| (i, w.max(0.0)));
        let sum = existing.iter().sum::<f64>() + explored.map(|(_, w)| w).unwrap_or(0.0);
        Allocation {
            existing: existing.iter().map(|w| w / sum).collect(),
            explored: explored.map(|(i, w)| (i, w / sum)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountSnapshot {
    pub date: NaiveDate,
    pub wealth: f64,
    /// Existing weights then the explored slot, as held at `date`.
    pub weights: Vec<f64>,
    pub explored_asset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioAccount {
    pub wealth: f64,
    /// Holdings over the existing universe (drifted to the current row).
    pub weights: Vec<f64>,
    pub explored: Option<(usize, f64)>,
    pub cost_paid: f64,
    pub history: Vec<AccountSnapshot>,
}

impl PortfolioAccount {
    fn new(n: usize, capital: f64, date: NaiveDate) -> Self {
        let w = vec![1.0 / n as f64; n];
        let mut weights = w.clone();
        weights.push(0.0);
        Self {
            wealth: capital,
            weights: w,
            explored: None,
            cost_paid: 0.0,
            history: vec![AccountSnapshot {
                date,
                wealth: capital,
                weights,
                explored_asset: None,
            }],
        }
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum::<f64>() + self.explored.map(|(_, w)| w).unwrap_or(0.0)
    }
}

/// Diagnostics of one step; one JSON line per step in the trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub date: NaiveDate,
    pub r_p: f64,
    pub turnover: f64,
    pub cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: MarketState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Total absolute change between drifted holdings and new targets.
pub fn turnover(
    drifted: &[f64],
    drifted_explored: Option<(usize, f64)>,
    target: &Allocation,
) -> f64 {
    let mut to: f64 = drifted
        .iter()
        .zip(&target.existing)
        .map(|(a, b)| (a - b).abs())
        .sum();
    to += match (drifted_explored, target.explored) {
        (Some((i, a)), Some((j, b))) if i == j => (a - b).abs(),
        (Some((_, a)), Some((_, b))) => a + b,
        (Some((_, a)), None) => a,
        (None, Some((_, b))) => b,
        (None, None) => 0.0,
    };
    to
}

pub struct Environment {
    config: EnvConfig,
    panel: PricePanel,
    returns: ReturnPanel,
    extended_ids: Vec<String>,
    extended_returns: Option<ReturnPanel>,
    raw_states: Vec<MarketState>,
    start: usize,
    norm: Option<NormStats>,
    t: usize,
    account: PortfolioAccount,
    window: RewardWindow,
    done: bool,
}

impl Environment {
    /// Builds the environment and resets it. `extended` must share the date
    /// index of `existing`.
    pub fn new(existing: &PricePanel, extended: Option<&PricePanel>, config: EnvConfig) -> Result<Self> {
        if config.transaction_cost < 0.0 || config.transaction_cost >= 1.0 {
            return Err(EnvError::InvalidConfig(format!(
                "transaction cost {}",
                config.transaction_cost
            )));
        }
        if config.reward_window < 2 || config.initial_capital <= 0.0 {
            return Err(EnvError::InvalidConfig(
                "reward window must be >= 2 and initial capital > 0".into(),
            ));
        }
        let n = existing.n_assets();
        if n == 0 {
            return Err(EnvError::InvalidConfig("no existing assets".into()));
        }
        let start = config.warmup;
        let needed = COVARIANCE_WINDOW.max(1);
        if existing.len() < start + 2 {
            return Err(EnvError::WarmupIncomplete {
                start,
                needed: existing.len().saturating_sub(2),
            });
        }
        let block = IndicatorBlock::compute(existing)?;
        let first_defined = block.defined_from.max(needed);
        if start < first_defined {
            return Err(EnvError::WarmupIncomplete {
                start,
                needed: first_defined,
            });
        }
        let returns = compute_returns(existing)?;
        let extended_returns = match extended {
            Some(ext) if ext.n_assets() > 0 => {
                if ext.dates != existing.dates {
                    return Err(EnvError::Data(DataError::Shape(
                        "extended panel dates differ from existing panel".into(),
                    )));
                }
                Some(compute_returns(ext)?)
            }
            _ => None,
        };
        let extended_ids = extended.map(|e| e.assets.clone()).unwrap_or_default();
        let mut raw_states = Vec::with_capacity(existing.len() - start);
        for t in start..existing.len() {
            let mut features = Vec::with_capacity(base_state_dim(n));
            for (i, ind) in block.per_asset.iter().enumerate() {
                features.extend_from_slice(&existing.bar(t, i));
                features.push(returns.at(t - 1, i));
                features.extend_from_slice(&ind.at(t).expect("warm-up checked"));
            }
            let cov = rolling_covariance(&returns, COVARIANCE_WINDOW, t)?;
            features.extend(cov.upper_triangle());
            let ext = extended_returns
                .as_ref()
                .map(|r| r.row(t - 1).to_vec())
                .unwrap_or_default();
            raw_states.push(MarketState {
                t,
                features,
                extended_returns: ext,
            });
        }
        let mut env = Self {
            account: PortfolioAccount::new(n, config.initial_capital, existing.dates[start]),
            window: RewardWindow::new(config.reward_window, config.risk_free),
            config,
            panel: existing.clone(),
            returns,
            extended_ids,
            extended_returns,
            raw_states,
            start,
            norm: None,
            t: start,
            done: false,
        };
        env.reset();
        Ok(env)
    }

    /// Restores the initial account (uniform weights, initial capital) and
    /// returns the first observation.
    pub fn reset(&mut self) -> MarketState {
        self.t = self.start;
        self.done = false;
        self.window = RewardWindow::new(self.config.reward_window, self.config.risk_free);
        self.account = PortfolioAccount::new(
            self.n_assets(),
            self.config.initial_capital,
            self.panel.dates[self.start],
        );
        self.observation()
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn n_assets(&self) -> usize {
        self.panel.n_assets()
    }

    pub fn n_extended(&self) -> usize {
        self.extended_ids.len()
    }

    pub fn extended_ids(&self) -> &[String] {
        &self.extended_ids
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.panel.assets
    }

    pub fn panel(&self) -> &PricePanel {
        &self.panel
    }

    pub fn base_dim(&self) -> usize {
        base_state_dim(self.n_assets())
    }

    pub fn augmented_dim(&self) -> usize {
        self.base_dim() + self.n_extended()
    }

    /// Current decision row.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn date(&self) -> NaiveDate {
        self.panel.dates[self.t]
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Steps in one full episode.
    pub fn episode_len(&self) -> usize {
        self.panel.len() - 1 - self.start
    }

    pub fn account(&self) -> &PortfolioAccount {
        &self.account
    }

    pub fn reward_window(&self) -> &RewardWindow {
        &self.window
    }

    /// Existing-universe returns; row `k` is the move from price row `k` to `k + 1`.
    pub fn returns(&self) -> &ReturnPanel {
        &self.returns
    }

    pub fn extended_returns(&self) -> Option<&ReturnPanel> {
        self.extended_returns.as_ref()
    }

    pub fn raw_state(&self) -> &MarketState {
        &self.raw_states[self.t - self.start]
    }

    pub fn raw_states(&self) -> &[MarketState] {
        &self.raw_states
    }

    /// Statistics over every observation of this environment.
    pub fn fit_norm_stats(&self) -> Result<NormStats> {
        NormStats::fit(&self.raw_states)
    }

    pub fn set_norm_stats(&mut self, stats: NormStats) -> Result<()> {
        let dim = self.augmented_dim();
        if stats.mean.len() != dim {
            return Err(EnvError::DimensionMismatch {
                expected: dim,
                got: stats.mean.len(),
            });
        }
        self.norm = Some(stats);
        Ok(())
    }

    pub fn norm_stats(&self) -> Option<&NormStats> {
        self.norm.as_ref()
    }

    /// Normalized state at the current row.
    pub fn state(&self) -> Result<MarketState> {
        normalize_state(self.raw_state(), self.norm.as_ref())
    }

    fn observation(&self) -> MarketState {
        match &self.norm {
            Some(n) => n.normalize(self.raw_state()).expect("dimension checked on set"),
            None => self.raw_state().clone(),
        }
    }

    /// Rebalances to `action`, realizes one period of returns and returns the
    /// SR60 reward of the net portfolio return stream.
    pub fn step(&mut self, action: &Allocation) -> Result<StepOutcome> {
        if self.done {
            return Err(EnvError::EpisodeDone);
        }
        let n = self.n_assets();
        if action.existing.len() != n {
            return Err(EnvError::DimensionMismatch {
                expected: n,
                got: action.existing.len(),
            });
        }
        if let Some((i, _)) = action.explored {
            if i >= self.n_extended() {
                return Err(EnvError::UnknownExtendedAsset {
                    index: i,
                    m: self.n_extended(),
                });
            }
        }
        action.check_simplex()?;
        let target = action.cleaned();
        let delta = self.config.transaction_cost;
        let to = turnover(&self.account.weights, self.account.explored, &target);
        let wealth = self.account.wealth;
        let cost = delta * to * wealth;

        let r = self.returns.row(self.t);
        let explored_r = target.explored.map(|(i, _)| {
            self.extended_returns
                .as_ref()
                .map(|e| e.at(self.t, i))
                .unwrap_or(0.0)
        });
        let gross_existing: Vec<f64> = target
            .existing
            .iter()
            .zip(r)
            .map(|(w, ri)| w * (1.0 + ri))
            .collect();
        let gross_explored = target
            .explored
            .zip(explored_r)
            .map(|((i, w), re)| (i, w * (1.0 + re)));
        let growth = gross_existing.iter().sum::<f64>() + gross_explored.map(|(_, g)| g).unwrap_or(0.0);
        let r_p = growth - 1.0 - delta * to;

        self.account.wealth = wealth * (1.0 + r_p);
        self.account.cost_paid += cost;
        self.account.weights = gross_existing.iter().map(|g| g / growth).collect();
        self.account.explored = gross_explored.map(|(i, g)| (i, g / growth));
        self.window.push(r_p);
        let reward = sharpe_window(&self.window).unwrap_or(0.0);

        self.t += 1;
        let date = self.panel.dates[self.t];
        self.account.history.push(AccountSnapshot {
            date,
            wealth: self.account.wealth,
            weights: target.executed(),
            explored_asset: target.explored.map(|(i, _)| i),
        });
        self.done = self.t + 1 >= self.panel.len();
        Ok(StepOutcome {
            next_state: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                date,
                r_p,
                turnover: to,
                cost,
                reward,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{SyntheticMarket, SyntheticSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn market(n: usize, m: usize, days: usize, seed: u64) -> SyntheticMarket {
        SyntheticSpec {
            n_existing: n,
            n_extended: m,
            days,
            ..SyntheticSpec::default()
        }
        .generate(seed)
    }

    fn env_for(mkt: &SyntheticMarket, cost: f64) -> Environment {
        Environment::new(
            &mkt.existing,
            Some(&mkt.extended),
            EnvConfig {
                transaction_cost: cost,
                ..EnvConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn reset_initializes_uniform_account() {
        let mkt = market(18, 2, 80, 1);
        let mut env = env_for(&mkt, 0.0005);
        let s0 = env.reset();
        assert!(env.account().weights.iter().all(|&w| (w - 1.0 / 18.0).abs() < 1e-15));
        assert_eq!(env.account().wealth, 1_000_000.0);
        assert_eq!(s0.features.len(), 18 * 14 + 18 * 19 / 2);
        assert_eq!(s0.augmented().len(), 18 * 14 + 171 + 2);
        assert_eq!(env.reset(), s0);
    }

    #[test]
    fn warmup_must_cover_indicators() {
        let mkt = market(2, 0, 80, 1);
        let err = Environment::new(
            &mkt.existing,
            None,
            EnvConfig {
                warmup: 30,
                ..EnvConfig::default()
            },
        )
        .err()
        .unwrap();
        assert!(matches!(err, EnvError::WarmupIncomplete { start: 30, needed: 60 }));
    }

    #[test]
    fn no_trade_costs_nothing() {
        let mkt = market(3, 0, 70, 2);
        let mut env = env_for(&mkt, 0.0005);
        let w = env.account().weights.clone();
        let out = env.step(&Allocation::existing_only(w)).unwrap();
        assert_eq!(out.info.turnover, 0.0);
        assert_eq!(out.info.cost, 0.0);
    }

    #[test]
    fn full_switch_costs_twice_delta() {
        let mkt = market(2, 0, 70, 3);
        let mut env = env_for(&mkt, 0.0005);
        env.step(&Allocation::existing_only(vec![1.0, 0.0])).unwrap();
        // re-target to asset 0 so holdings are exactly [1, 0] with no drift
        env.step(&Allocation::existing_only(vec![1.0, 0.0])).unwrap();
        let wealth = env.account().wealth;
        let out = env.step(&Allocation::existing_only(vec![0.0, 1.0])).unwrap();
        assert!((out.info.turnover - 2.0).abs() < 1e-15);
        assert!((out.info.cost / wealth - 0.001).abs() < 1e-15);
    }

    #[test]
    fn symmetric_returns_cancel() {
        let days = 70;
        let dates: Vec<NaiveDate> = (0..days)
            .map(|k| NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(k))
            .collect();
        // alternating closes so the final step has returns +2% / -2%
        let mut close = Vec::new();
        for t in 0..days as usize {
            let base = if t == days as usize - 1 { [1.02, 0.98] } else { [1.0, 1.0] };
            close.extend_from_slice(&base);
        }
        let panel = PricePanel::new(
            dates,
            vec!["A".into(), "B".into()],
            close.clone(),
            close.iter().map(|c| c * 1.01).collect(),
            close.iter().map(|c| c * 0.99).collect(),
            close.clone(),
            vec![1.0; close.len()],
        )
        .unwrap();
        let mut env = Environment::new(
            &panel,
            None,
            EnvConfig {
                warmup: 60,
                ..EnvConfig::default()
            },
        )
        .unwrap();
        let mut last = None;
        while !env.is_done() {
            last = Some(env.step(&Allocation::existing_only(vec![0.5, 0.5])).unwrap());
        }
        let last = last.unwrap();
        assert!(last.info.r_p.abs() < 1e-15);
        assert!((env.account().wealth - 1_000_000.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_off_simplex_and_stepping_past_end() {
        let mkt = market(2, 1, 63, 4);
        let mut env = env_for(&mkt, 0.0005);
        assert!(matches!(
            env.step(&Allocation::existing_only(vec![0.7, 0.7])),
            Err(EnvError::NotOnSimplex { .. })
        ));
        assert!(matches!(
            env.step(&Allocation::existing_only(vec![1.1, -0.1])),
            Err(EnvError::NotOnSimplex { .. })
        ));
        assert!(matches!(
            env.step(&Allocation {
                existing: vec![0.5, 0.4],
                explored: Some((3, 0.1))
            }),
            Err(EnvError::UnknownExtendedAsset { .. })
        ));
        while !env.is_done() {
            env.step(&Allocation::existing_only(vec![0.5, 0.5])).unwrap();
        }
        assert!(matches!(
            env.step(&Allocation::existing_only(vec![0.5, 0.5])),
            Err(EnvError::EpisodeDone)
        ));
    }

    #[test]
    fn sharpe_window_examples() {
        let mut w = RewardWindow::new(60, 0.0);
        assert!(matches!(sharpe_window(&w), Err(EnvError::InsufficientHistory { .. })));
        for _ in 0..5 {
            w.push(0.01);
        }
        assert_eq!(sharpe_window(&w).unwrap(), 0.0);
        let mut w = RewardWindow::new(60, 0.0);
        for k in 0..10 {
            w.push(if k % 2 == 0 { 0.01 } else { -0.01 });
        }
        assert!(sharpe_window(&w).unwrap().abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut w = RewardWindow::new(60, 0.0);
        let xs: Vec<f64> = (0..75).map(|_| rng.random_range(-0.03..0.04)).collect();
        for &x in &xs {
            w.push(x);
        }
        assert_eq!(w.len(), 60);
        let tail = &xs[15..];
        let m = tail.iter().sum::<f64>() / 60.0;
        let sd = (tail.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 59.0).sqrt();
        assert!((sharpe_window(&w).unwrap() - m / sd).abs() < 1e-12);
    }

    #[test]
    fn normalization_examples() {
        let mk = |t, v: f64, c: f64| MarketState {
            t,
            features: vec![v, c],
            extended_returns: vec![],
        };
        let states = [mk(0, 1.0, 5.0), mk(1, 3.0, 5.0)];
        let stats = NormStats::fit(&states).unwrap();
        // mean 2, population sigma 1
        let z = stats.normalize(&mk(2, 2.0, 7.0)).unwrap();
        assert_eq!(z.features, vec![0.0, 0.0]);
        assert_eq!(stats.normalize(&mk(3, 3.0, 5.0)).unwrap().features[0], 1.0);
        assert_eq!(stats.normalize(&mk(3, 1e6, 5.0)).unwrap().features[0], 10.0);
        assert!(matches!(normalize_state(&states[0], None), Err(EnvError::StatsNotFitted)));
    }

    fn random_allocation(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Allocation {
        let raw: Vec<f64> = (0..=n).map(|_| rng.random::<f64>().powi(3)).collect();
        let s: f64 = raw.iter().sum();
        let explore = m > 0 && rng.random_bool(0.5);
        if explore {
            Allocation {
                existing: raw[..n].iter().map(|x| x / s).collect(),
                explored: Some((rng.random_range(0..m), raw[n] / s)),
            }
        } else {
            let s2: f64 = raw[..n].iter().sum();
            Allocation::existing_only(raw[..n].iter().map(|x| x / s2).collect())
        }
    }

    #[test]
    fn wealth_recursion_and_simplex_preservation() {
        let mkt = market(4, 2, 200, 5);
        let mut env = env_for(&mkt, 0.0005);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut product = 1.0;
        let mut last_cost = 0.0;
        while !env.is_done() {
            let out = env.step(&random_allocation(&mut rng, 4, 2)).unwrap();
            product *= 1.0 + out.info.r_p;
            assert!((env.account().weight_sum() - 1.0).abs() < 1e-9);
            assert!(env.account().cost_paid >= last_cost);
            last_cost = env.account().cost_paid;
        }
        let expected = 1_000_000.0 * product;
        assert!((env.account().wealth - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn zero_cost_buy_and_hold_matches_analytic_return() {
        let mkt = market(3, 0, 150, 6);
        let mut env = env_for(&mkt, 0.0);
        let w0 = [0.2, 0.5, 0.3];
        env.step(&Allocation::existing_only(w0.to_vec())).unwrap();
        while !env.is_done() {
            // hold: re-target to the drifted weights
            let w = env.account().weights.clone();
            env.step(&Allocation::existing_only(w)).unwrap();
        }
        let p = &mkt.existing;
        let (s, e) = (60, p.len() - 1);
        let analytic: f64 = (0..3).map(|i| w0[i] * p.close_at(e, i) / p.close_at(s, i)).sum();
        assert!((env.account().wealth / 1e6 - analytic).abs() < 1e-9);
    }
}

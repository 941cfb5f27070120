//! The accept/reject loop that ties the two agents together.
//!
//! Each period the allocation agent proposes base weights `a_U` over the
//! existing universe and the exploration agent may propose one extended asset.
//! The explored portfolio `[(1 - kappa) a_U, kappa]` is adopted only when its
//! counterfactual trailing Sharpe strictly beats that of `a_U`.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ReturnPanel;
use crate::dqn::{DqnAgent, DqnError, Transition, ABSTAIN};
use crate::env::{Allocation, EnvError, Environment, MarketState, NormStats, StepOutcome};
use crate::nn::NetCheckpoint;
use crate::ppo::{compute_advantages, ActMode, PolicyAction, PpoAgent, PpoCheckpoint, PpoError, PpoStats, Rollout, RolloutStep};
use crate::stats;

const SIMPLEX_TOL: f64 = 1e-9;
pub const CHECKPOINT_FORMAT: &str = "finx-agents/1";

#[derive(Debug, Error)]
pub enum CoordinatorError {
    #[error("invalid coordinator config: {0}")]
    InvalidConfig(String),
    #[error("lookback at row {t} needs {window} prior return rows")]
    InsufficientHistory { t: usize, window: usize },
    #[error("base weights not on the simplex (sum {sum}, min {min})")]
    NotOnSimplex { sum: f64, min: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in episode {episode}, step {step}: {message}")]
    NonFinite {
        episode: usize,
        step: usize,
        message: String,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
}

pub type Result<T, E = CoordinatorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoordinatorConfig {
    /// Fraction of wealth given to an adopted extended asset.
    pub kappa: f64,
    /// Trailing return rows used by the counterfactual Sharpe evaluation.
    pub eval_window: usize,
}

impl Default for CoordinatorConfig {
    fn default() -> Self {
        Self {
            kappa: 0.10,
            eval_window: 60,
        }
    }
}

impl CoordinatorConfig {
    pub fn check(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(CoordinatorError::InvalidConfig(format!("kappa {} outside [0, 1)", self.kappa)));
        }
        if self.eval_window < 2 {
            return Err(CoordinatorError::InvalidConfig("eval_window must be >= 2".into()));
        }
        Ok(())
    }
}

fn lookback_rows(t: usize, window: usize, returns: &ReturnPanel) -> Result<std::ops::Range<usize>> {
    if t < window || t > returns.returns.len() {
        return Err(CoordinatorError::InsufficientHistory { t, window });
    }
    Ok(t - window..t)
}

/// Returns of holding `weights` fixed over return rows `[t - window, t)`.
pub fn lookback_returns(weights: &[f64], returns: &ReturnPanel, t: usize, window: usize) -> Result<Vec<f64>> {
    let n = returns.assets.len();
    if weights.len() != n {
        return Err(CoordinatorError::DimensionMismatch {
            expected: n,
            got: weights.len(),
        });
    }
    Ok(lookback_rows(t, window, returns)?
        .map(|k| weights.iter().zip(returns.row(k)).map(|(w, r)| w * r).sum())
        .collect())
}

/// Counterfactual trailing Sharpe (sample std, zero risk-free) of fixed weights.
pub fn evaluate_sharpe(weights: &[f64], returns: &ReturnPanel, t: usize, window: usize) -> Result<f64> {
    let series = lookback_returns(weights, returns, t, window)?;
    Ok(stats::sharpe(&series, 0.0).unwrap_or(0.0))
}

/// Counterfactual trailing Sharpe of `[(1 - kappa) a_U, kappa]` with the explored
/// slot holding extended asset `asset`.
pub fn evaluate_explored_sharpe(
    base: &[f64],
    kappa: f64,
    returns: &ReturnPanel,
    extended: &ReturnPanel,
    asset: usize,
    t: usize,
    window: usize,
) -> Result<f64> {
    if asset >= extended.assets.len() {
        return Err(EnvError::UnknownExtendedAsset {
            index: asset,
            m: extended.assets.len(),
        }
        .into());
    }
    let rows = lookback_rows(t, window, extended)?;
    let existing = lookback_returns(base, returns, t, window)?;
    let series: Vec<f64> = existing
        .iter()
        .zip(rows)
        .map(|(p, k)| (1.0 - kappa) * p + kappa * extended.at(k, asset))
        .collect();
    Ok(stats::sharpe(&series, 0.0).unwrap_or(0.0))
}

/// The explored portfolio `[(1 - kappa) a_U, kappa]`.
pub fn reoptimize(base: &[f64], asset: usize, kappa: f64) -> Result<Allocation> {
    let sum: f64 = base.iter().sum();
    let min = base.iter().copied().fold(f64::INFINITY, f64::min);
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOL || min < 0.0 {
        return Err(CoordinatorError::NotOnSimplex { sum, min });
    }
    Ok(Allocation {
        existing: base.iter().map(|w| (1.0 - kappa) * w).collect(),
        explored: Some((asset, kappa)),
    })
}

/// Acceptance rule: strict improvement only.
pub fn accept(sr_current: f64, sr_new: f64) -> bool {
    sr_new > sr_current
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    pub t: usize,
    pub date: NaiveDate,
    /// `a_U`.
    pub base_weights: Vec<f64>,
    /// Extended asset index proposed, `None` on abstain.
    pub candidate: Option<usize>,
    pub adopted: bool,
    pub sr_current: f64,
    pub sr_new: Option<f64>,
    /// Reward routed to the exploration agent: `SR_new - SR_current`, or 0 on abstain.
    pub delta_sr: f64,
    pub kappa: f64,
}

impl StepDecision {
    /// Target weights actually executed: the explored portfolio when adopted,
    /// `[a_U, 0]` otherwise.
    pub fn allocation(&self) -> Allocation {
        match (self.adopted, self.candidate) {
            (true, Some(asset)) => Allocation {
                existing: self.base_weights.iter().map(|w| (1.0 - self.kappa) * w).collect(),
                explored: Some((asset, self.kappa)),
            },
            _ => Allocation::existing_only(self.base_weights.clone()),
        }
    }

    /// Reward routed to the allocation agent.
    pub fn ppo_reward(&self) -> f64 {
        self.sr_current
    }
}

/// One executed step with everything needed to fill both agents' buffers.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: MarketState,
    pub action: PolicyAction,
    pub decision: StepDecision,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Runs the decision logic at the environment's current row without stepping.
pub fn decide(
    env: &Environment,
    state: &MarketState,
    ppo: &mut PpoAgent,
    dqn: Option<&mut DqnAgent>,
    config: &CoordinatorConfig,
    mode: Mode,
) -> Result<(StepDecision, PolicyAction)> {
    let t = env.t();
    let action = ppo.act(
        state.base(),
        match mode {
            Mode::Train => ActMode::Train,
            Mode::Eval => ActMode::Eval,
        },
    )?;
    let base = action.weights.clone();
    let sr_current = evaluate_sharpe(&base, env.returns(), t, config.eval_window)?;
    let pick = match dqn {
        Some(agent) => {
            let expected = env.n_extended() + 1;
            if agent.n_actions() != expected {
                return Err(CoordinatorError::DimensionMismatch {
                    expected,
                    got: agent.n_actions(),
                });
            }
            agent.act(&state.augmented(), mode == Mode::Train)?
        }
        None => ABSTAIN,
    };
    let candidate = (pick != ABSTAIN).then(|| pick - 1);
    let sr_new = match (candidate, env.extended_returns()) {
        (Some(asset), Some(ext)) => Some(evaluate_explored_sharpe(
            &base,
            config.kappa,
            env.returns(),
            ext,
            asset,
            t,
            config.eval_window,
        )?),
        _ => None,
    };
    let adopted = sr_new.is_some_and(|s| accept(sr_current, s));
    let delta_sr = sr_new.map(|s| s - sr_current).unwrap_or(0.0);
    Ok((
        StepDecision {
            t,
            date: env.date(),
            base_weights: base,
            candidate,
            adopted,
            sr_current,
            sr_new,
            delta_sr,
            kappa: config.kappa,
        },
        action,
    ))
}

/// Decides at the current row and steps the environment with the executed weights.
pub fn coordinate_step(
    env: &mut Environment,
    ppo: &mut PpoAgent,
    dqn: Option<&mut DqnAgent>,
    config: &CoordinatorConfig,
    mode: Mode,
) -> Result<StepResult> {
    let state = env.state()?;
    let (decision, action) = decide(env, &state, ppo, dqn, config, mode)?;
    let outcome = env.step(&decision.allocation())?;
    Ok(StepResult {
        state,
        action,
        decision,
        outcome,
    })
}

/// One line of the per-step JSON trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub date: NaiveDate,
    pub base_weights: Vec<f64>,
    pub candidate: Option<String>,
    pub adopted: bool,
    pub sr_current: Option<f64>,
    pub sr_new: Option<f64>,
    /// Existing weights then the explored slot.
    pub executed_weights: Vec<f64>,
    pub wealth: f64,
    pub r_p: f64,
    pub turnover: f64,
    pub cost: f64,
}

impl TraceRecord {
    pub fn from_step(step: &StepResult, extended_ids: &[String], wealth: f64) -> Self {
        let d = &step.decision;
        Self {
            date: d.date,
            base_weights: d.base_weights.clone(),
            candidate: d.candidate.map(|i| extended_ids[i].clone()),
            adopted: d.adopted,
            sr_current: Some(d.sr_current),
            sr_new: d.sr_new,
            executed_weights: d.allocation().executed(),
            wealth,
            r_p: step.outcome.info.r_p,
            turnover: step.outcome.info.turnover,
            cost: step.outcome.info.cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    pub steps: usize,
    /// Mean reward routed to the allocation agent (SR_current).
    pub mean_ppo_reward: f64,
    /// Mean SR60 reward reported by the environment.
    pub mean_env_reward: f64,
    /// Sharpe of the episode's net daily portfolio returns.
    pub sharpe: f64,
    pub final_wealth: f64,
    pub proposal_rate: f64,
    /// Adopted proposals over all proposals.
    pub acceptance_rate: f64,
    pub ppo: PpoStats,
    pub dqn_loss: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub episodes: Vec<EpisodeStats>,
    pub best_episode: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub format: String,
    pub ppo: PpoCheckpoint,
    pub dqn: Option<NetCheckpoint>,
    pub norm: Option<NormStats>,
}

impl AgentCheckpoint {
    pub fn capture(ppo: &PpoAgent, dqn: Option<&DqnAgent>, norm: Option<&NormStats>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            ppo: ppo.to_checkpoint(),
            dqn: dqn.map(DqnAgent::to_checkpoint),
            norm: norm.cloned(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainingReport,
    /// Agents from the episode with the highest training Sharpe.
    pub best: Option<AgentCheckpoint>,
}

/// Runs `episodes` full passes over the environment. The allocation agent is
/// updated once per episode from its rollout; the exploration agent is
/// updated every step once its replay holds a batch.
pub fn train(
    env: &mut Environment,
    ppo: &mut PpoAgent,
    mut dqn: Option<&mut DqnAgent>,
    config: &CoordinatorConfig,
    episodes: usize,
) -> Result<TrainOutcome> {
    config.check()?;
    if let Some(agent) = dqn.as_deref_mut() {
        agent.plan_steps(episodes * env.episode_len());
    }
    let mut report = TrainingReport::default();
    let mut best: Option<(f64, AgentCheckpoint)> = None;
    let mut rollout = Rollout::default();
    for episode in 0..episodes {
        env.reset();
        rollout.clear();
        let (mut net_returns, mut env_rewards) = (Vec::new(), Vec::new());
        let (mut proposals, mut adoptions) = (0usize, 0usize);
        let (mut dqn_loss, mut dqn_updates) = (0.0, 0usize);
        let mut last_state = None;
        while !env.is_done() {
            let step = coordinate_step(env, ppo, dqn.as_deref_mut(), config, Mode::Train)?;
            let d = &step.decision;
            if !d.sr_current.is_finite() || !step.outcome.info.r_p.is_finite() {
                return Err(CoordinatorError::NonFinite {
                    episode,
                    step: rollout.len(),
                    message: format!("sr_current {} r_p {}", d.sr_current, step.outcome.info.r_p),
                });
            }
            proposals += usize::from(d.candidate.is_some());
            adoptions += usize::from(d.adopted);
            net_returns.push(step.outcome.info.r_p);
            env_rewards.push(step.outcome.reward);
            if let Some(agent) = dqn.as_deref_mut() {
                agent.remember(Transition {
                    state: step.state.augmented(),
                    action: d.candidate.map(|i| i + 1).unwrap_or(ABSTAIN),
                    reward: d.delta_sr,
                    next_state: step.outcome.next_state.augmented(),
                    done: step.outcome.done,
                })?;
                if agent.replay().len() >= agent.config().batch_size {
                    dqn_loss += agent.train_step()?;
                    dqn_updates += 1;
                }
            }
            rollout.push(RolloutStep {
                value: ppo.value(step.state.base())?,
                state: step.state.features,
                logits: step.action.logits,
                log_density: step.action.log_density,
                reward: d.sr_current,
                terminal: false,
            });
            last_state = Some(step.outcome.next_state);
        }
        let last_value = match &last_state {
            Some(s) => ppo.value(s.base())?,
            None => 0.0,
        };
        let ppo_stats = if rollout.is_empty() {
            PpoStats::default()
        } else {
            compute_advantages(&mut rollout, ppo.config().gamma, ppo.config().gae_lambda, last_value)?;
            ppo.update(&rollout)?
        };
        let steps = rollout.len();
        let sharpe = stats::sharpe(&net_returns, 0.0).unwrap_or(0.0);
        let stats = EpisodeStats {
            episode,
            steps,
            mean_ppo_reward: stats::mean(&rollout.steps.iter().map(|s| s.reward).collect::<Vec<_>>()),
            mean_env_reward: stats::mean(&env_rewards),
            sharpe,
            final_wealth: env.account().wealth,
            proposal_rate: proposals as f64 / steps.max(1) as f64,
            acceptance_rate: if proposals == 0 { 0.0 } else { adoptions as f64 / proposals as f64 },
            ppo: ppo_stats,
            dqn_loss: (dqn_updates > 0).then(|| dqn_loss / dqn_updates as f64),
            epsilon: dqn.as_deref().map(DqnAgent::epsilon),
        };
        log::info!(
            "episode {episode}: sharpe {:.4} wealth {:.2} proposals {:.3} accepted {:.3}",
            stats.sharpe,
            stats.final_wealth,
            stats.proposal_rate,
            stats.acceptance_rate
        );
        report.episodes.push(stats);
        if best.as_ref().is_none_or(|(s, _)| sharpe > *s) {
            report.best_episode = Some(episode);
            best = Some((sharpe, AgentCheckpoint::capture(ppo, dqn.as_deref(), env.norm_stats())));
        }
    }
    Ok(TrainOutcome {
        report,
        best: best.map(|(_, c)| c),
    })
}

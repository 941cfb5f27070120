//! Deterministic evaluation of any strategy over an environment.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, follow_loser, follow_winner, mvo_weights, trailing_moments};
use crate::coordinator::{coordinate_step, CoordinatorConfig, Mode, TraceRecord};
use crate::dqn::DqnAgent;
use crate::env::{Allocation, Environment};
use crate::metrics::EquityCurve;
use crate::ppo::PpoAgent;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Finxplore,
    NoExplore,
    Mvo,
    Winner,
    Loser,
    Index,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Finxplore,
        Strategy::NoExplore,
        Strategy::Mvo,
        Strategy::Winner,
        Strategy::Loser,
        Strategy::Index,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Finxplore => "finxplore",
            Strategy::NoExplore => "no-explore",
            Strategy::Mvo => "mvo",
            Strategy::Winner => "winner",
            Strategy::Loser => "loser",
            Strategy::Index => "index",
        }
    }

    pub fn needs_checkpoint(self) -> bool {
        matches!(self, Strategy::Finxplore | Strategy::NoExplore)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown strategy '{s}'"))
    }
}

/// A weight-producing policy stepped through the shared environment.
pub enum Policy<'a> {
    Agents {
        ppo: &'a mut PpoAgent,
        dqn: Option<&'a mut DqnAgent>,
        config: &'a CoordinatorConfig,
    },
    Mvo {
        risk_aversion: f64,
        window: usize,
    },
    Winner,
    Loser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    pub curve: EquityCurve,
    pub trace: Vec<TraceRecord>,
}

impl Backtest {
    pub fn trace_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }
}

fn baseline_weights(env: &Environment, policy: &Policy<'_>) -> Result<Vec<f64>> {
    let t = env.t();
    let returns = env.returns();
    Ok(match policy {
        Policy::Mvo { risk_aversion, window } => {
            let (mu, sigma) = trailing_moments(returns, t, *window)?;
            mvo_weights(&mu, &sigma, *risk_aversion)?.weights
        }
        Policy::Winner | Policy::Loser if t == 0 => {
            return Err(baselines::BaselineError::InsufficientHistory { have: 0, need: 1 }.into())
        }
        Policy::Winner => follow_winner(returns.row(t - 1))?,
        Policy::Loser => follow_loser(returns.row(t - 1))?,
        Policy::Agents { .. } => unreachable!("agents are stepped by the coordinator"),
    })
}

/// Resets `env` and steps it to the end in evaluation mode.
pub fn run_backtest(env: &mut Environment, mut policy: Policy<'_>) -> Result<Backtest> {
    env.reset();
    let mut trace = Vec::with_capacity(env.episode_len());
    while !env.is_done() {
        let record = match &mut policy {
            Policy::Agents { ppo, dqn, config } => {
                let step = coordinate_step(env, ppo, dqn.as_deref_mut(), config, Mode::Eval)?;
                TraceRecord::from_step(&step, env.extended_ids(), env.account().wealth)
            }
            other => {
                let weights = baseline_weights(env, other)?;
                let date = env.date();
                let alloc = Allocation::existing_only(weights.clone());
                let info = env.step(&alloc)?.info;
                TraceRecord {
                    date,
                    base_weights: weights,
                    candidate: None,
                    adopted: false,
                    sr_current: None,
                    sr_new: None,
                    executed_weights: alloc.executed(),
                    wealth: env.account().wealth,
                    r_p: info.r_p,
                    turnover: info.turnover,
                    cost: info.cost,
                }
            }
        };
        trace.push(record);
    }
    let history = &env.account().history;
    let curve = EquityCurve::new(
        history.iter().map(|s| s.date).collect(),
        history.iter().map(|s| s.wealth).collect(),
    )?;
    Ok(Backtest { curve, trace })
}

//! Dual-agent portfolio allocation.
//!
//! A PPO agent allocates wealth across an existing universe of assets while a
//! DQN agent proposes one asset per period from an extended universe. A
//! proposal is adopted, with a fixed fraction of wealth, only when it raises
//! the trailing Sharpe ratio of the portfolio.
//!
//! The crate is organized bottom-up:
//!
//! - [`data`]: CSV ingestion, alignment, returns and train/trade splits.
//! - [`indicators`]: technical indicators and rolling covariance.
//! - [`env`]: the trading environment (state, costs, wealth, SR60 reward).
//! - [`nn`]: dense networks with reverse-mode gradients and Adam.
//! - [`ppo`], [`dqn`]: the two agents.
//! - [`coordinator`]: the accept/reject loop tying the agents together.
//! - [`baselines`], [`backtest`], [`metrics`]: comparison strategies and evaluation.
//! - [`config`], [`search`], [`report`], [`commands`]: run configuration and the CLI verbs.

pub mod backtest;
pub mod baselines;
pub mod commands;
pub mod config;
pub mod coordinator;
pub mod data;
pub mod dqn;
pub mod env;
mod error;
pub mod indicators;
pub mod metrics;
pub mod nn;
pub mod ppo;
pub mod report;
pub mod search;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};

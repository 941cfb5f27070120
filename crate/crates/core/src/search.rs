//! Seeded random hyperparameter search over the allowed ranges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ranges, RunConfig};
use crate::data::DateRange;
use crate::nn::Activation;

pub const VALIDATION_FRACTION: f64 = 0.2;

/// One draw from the search space. Network shape, learning rate and
/// activation apply to both agents; the rest to the agent they name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledParams {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub activation: Activation,
    pub dropout: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub ppo_epochs: usize,
    pub q_batch_size: usize,
}

pub const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Sigmoid, Activation::Tanh];

#[derive(Debug, Clone)]
pub struct SearchSpace {
    rng: ChaCha8Rng,
}

impl SearchSpace {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Next sample: log-uniform learning rate, uniform everything else.
    pub fn sample(&mut self) -> SampledParams {
        let rng = &mut self.rng;
        let (lo, hi) = ranges::LEARNING_RATE;
        let log_lr = rng.random_range(lo.ln()..=hi.ln());
        SampledParams {
            hidden_layers: rng.random_range(ranges::HIDDEN_LAYERS.0..=ranges::HIDDEN_LAYERS.1),
            hidden_dim: rng.random_range(ranges::HIDDEN_DIM.0..=ranges::HIDDEN_DIM.1),
            learning_rate: log_lr.exp().clamp(lo, hi),
            gamma: rng.random_range(ranges::GAMMA.0..=ranges::GAMMA.1),
            activation: ACTIVATIONS[rng.random_range(0..ACTIVATIONS.len())],
            dropout: rng.random_range(ranges::DROPOUT.0..=ranges::DROPOUT.1),
            entropy_coef: rng.random_range(ranges::ENTROPY_COEF.0..=ranges::ENTROPY_COEF.1),
            value_coef: rng.random_range(ranges::VALUE_COEF.0..=ranges::VALUE_COEF.1),
            ppo_epochs: rng.random_range(ranges::PPO_EPOCHS.0..=ranges::PPO_EPOCHS.1),
            q_batch_size: rng.random_range(ranges::Q_BATCH.0..=ranges::Q_BATCH.1),
        }
    }
}

impl SampledParams {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.ppo.hidden_layers = self.hidden_layers;
        c.ppo.hidden_dim = self.hidden_dim;
        c.ppo.learning_rate = self.learning_rate;
        c.ppo.gamma = self.gamma;
        c.ppo.activation = self.activation;
        c.ppo.dropout = self.dropout;
        c.ppo.entropy_coef = self.entropy_coef;
        c.ppo.value_coef = self.value_coef;
        c.ppo.epochs = self.ppo_epochs;
        c.ppo.clip_epsilon = ranges::CLIP_EPSILON;
        c.dqn.hidden_layers = self.hidden_layers;
        c.dqn.hidden_dim = self.hidden_dim;
        c.dqn.learning_rate = self.learning_rate;
        c.dqn.activation = self.activation;
        c.dqn.batch_size = self.q_batch_size;
        c.dqn.replay_capacity = c.dqn.replay_capacity.max(self.q_batch_size);
        c
    }
}

/// Splits the training dates into a fit range (first 80%) and a validation
/// range (last 20%).
pub fn validation_ranges(train_dates: &[chrono::NaiveDate]) -> Option<(DateRange, DateRange)> {
    let n = train_dates.len();
    let cut = ((n as f64) * (1.0 - VALIDATION_FRACTION)).round() as usize;
    if cut == 0 || cut >= n {
        return None;
    }
    Some((
        DateRange::new(train_dates[0], train_dates[cut - 1]),
        DateRange::new(train_dates[cut], train_dates[n - 1]),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub sample: usize,
    pub validation_sharpe: Option<f64>,
    pub params: SampledParams,
    pub error: Option<String>,
}

/// Orders by validation Sharpe (descending), failed or undefined samples last,
/// ties by sample index, and assigns ranks from 1.
pub fn rank(mut rows: Vec<LeaderboardRow>) -> Vec<LeaderboardRow> {
    rows.sort_by(|a, b| {
        let key = |r: &LeaderboardRow| r.validation_sharpe.filter(|s| s.is_finite());
        match (key(a), key(b)) {
            (Some(x), Some(y)) => y.total_cmp(&x).then(a.sample.cmp(&b.sample)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.sample.cmp(&b.sample),
        }
    });
    for (k, r) in rows.iter_mut().enumerate() {
        r.rank = k + 1;
    }
    rows
}

pub fn leaderboard_csv(rows: &[LeaderboardRow]) -> String {
    let mut out = String::from(
        "rank,sample,validation_sharpe,hidden_layers,hidden_dim,learning_rate,gamma,activation,dropout,entropy_coef,value_coef,ppo_epochs,q_batch_size,error\n",
    );
    for r in rows {
        let p = &r.params;
        let act = match p.activation {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.rank,
            r.sample,
            r.validation_sharpe.map(|s| s.to_string()).unwrap_or_default(),
            p.hidden_layers,
            p.hidden_dim,
            p.learning_rate,
            p.gamma,
            act,
            p.dropout,
            p.entropy_coef,
            p.value_coef,
            p.ppo_epochs,
            p.q_batch_size,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        ));
    }
    out
}

//! Run configuration: a TOML file with schema validation. Every validation
//! error names the offending field by its dotted path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::CoordinatorConfig;
use crate::data::{DateRange, UniverseSpec};
use crate::dqn::DqnConfig;
use crate::env::EnvConfig;
use crate::ppo::PpoConfig;

pub const DATA_DIR_ENV: &str = "FINX_DATA_DIR";

/// Allowed hyperparameter ranges (inclusive).
pub mod ranges {
    pub const HIDDEN_LAYERS: (usize, usize) = (1, 8);
    pub const HIDDEN_DIM: (usize, usize) = (2, 512);
    pub const LEARNING_RATE: (f64, f64) = (1e-8, 1e-1);
    pub const GAMMA: (f64, f64) = (0.0, 1.0);
    pub const DROPOUT: (f64, f64) = (0.0, 0.5);
    pub const ENTROPY_COEF: (f64, f64) = (0.01, 0.1);
    pub const VALUE_COEF: (f64, f64) = (0.5, 1.0);
    pub const PPO_EPOCHS: (usize, usize) = (5, 50);
    pub const Q_BATCH: (usize, usize) = (32, 256);
    pub const CLIP_EPSILON: f64 = 0.2;
    pub const EPISODES: usize = 500;
    pub const KAPPA: f64 = 0.10;
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot parse {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { field, .. } => Some(field),
            _ => None,
        }
    }
}

pub type Result<T, E = ConfigError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniverseConfig {
    pub existing: Vec<String>,
    #[serde(default)]
    pub extended: Vec<String>,
    /// Asset whose closes form the index reference curve. Without it the
    /// index is the price-weighted sum of the existing universe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<String>,
    pub train_range: DateRange,
    pub trade_range: DateRange,
}

impl UniverseConfig {
    pub fn spec(&self) -> UniverseSpec {
        UniverseSpec {
            existing: self.existing.clone(),
            extended: self.extended.clone(),
            train_range: self.train_range,
            trade_range: self.trade_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: ranges::EPISODES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MvoConfig {
    pub risk_aversion: f64,
    pub window: usize,
}

impl Default for MvoConfig {
    fn default() -> Self {
        Self {
            risk_aversion: 1.0,
            window: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Directory of per-asset CSV files; falls back to `$FINX_DATA_DIR`, then `data`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub universe: UniverseConfig,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub dqn: DqnConfig,
    #[serde(default)]
    pub coordinator: CoordinatorConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub mvo: MvoConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        message: message.into(),
    }
}

fn in_range<T: PartialOrd + std::fmt::Display + Copy>(field: &str, v: T, (lo, hi): (T, T)) -> Result<()> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} outside [{lo}, {hi}]")))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }

    pub fn validate(&self) -> Result<()> {
        let u = &self.universe;
        if u.existing.is_empty() {
            return Err(invalid("universe.existing", "must list at least one asset"));
        }
        if u.train_range.start > u.train_range.end {
            return Err(invalid("universe.train_range", "start after end"));
        }
        if u.trade_range.start > u.trade_range.end {
            return Err(invalid("universe.trade_range", "start after end"));
        }
        if u.train_range.end >= u.trade_range.start {
            return Err(invalid("universe.trade_range", "must begin after train_range ends"));
        }
        if let Err(e) = u.spec().validate() {
            return Err(invalid("universe", e.to_string()));
        }

        let e = &self.env;
        if !(0.0..1.0).contains(&e.transaction_cost) {
            return Err(invalid("env.transaction_cost", format!("{} outside [0, 1)", e.transaction_cost)));
        }
        if e.reward_window < 2 {
            return Err(invalid("env.reward_window", "must be >= 2"));
        }
        if !(e.initial_capital > 0.0 && e.initial_capital.is_finite()) {
            return Err(invalid("env.initial_capital", "must be positive"));
        }
        if e.warmup < crate::indicators::COVARIANCE_WINDOW {
            return Err(invalid(
                "env.warmup",
                format!("must be >= {} for the indicators to be defined", crate::indicators::COVARIANCE_WINDOW),
            ));
        }

        let p = &self.ppo;
        in_range("ppo.hidden_layers", p.hidden_layers, ranges::HIDDEN_LAYERS)?;
        in_range("ppo.hidden_dim", p.hidden_dim, ranges::HIDDEN_DIM)?;
        in_range("ppo.learning_rate", p.learning_rate, ranges::LEARNING_RATE)?;
        in_range("ppo.gamma", p.gamma, ranges::GAMMA)?;
        in_range("ppo.gae_lambda", p.gae_lambda, (0.0, 1.0))?;
        in_range("ppo.dropout", p.dropout, ranges::DROPOUT)?;
        in_range("ppo.entropy_coef", p.entropy_coef, ranges::ENTROPY_COEF)?;
        in_range("ppo.value_coef", p.value_coef, ranges::VALUE_COEF)?;
        in_range("ppo.epochs", p.epochs, ranges::PPO_EPOCHS)?;
        if !(p.clip_epsilon > 0.0 && p.clip_epsilon < 1.0) {
            return Err(invalid("ppo.clip_epsilon", format!("{} outside (0, 1)", p.clip_epsilon)));
        }
        if p.minibatch_size == 0 {
            return Err(invalid("ppo.minibatch_size", "must be positive"));
        }
        if !p.init_log_std.is_finite() {
            return Err(invalid("ppo.init_log_std", "must be finite"));
        }

        let d = &self.dqn;
        in_range("dqn.hidden_layers", d.hidden_layers, ranges::HIDDEN_LAYERS)?;
        in_range("dqn.hidden_dim", d.hidden_dim, ranges::HIDDEN_DIM)?;
        in_range("dqn.learning_rate", d.learning_rate, ranges::LEARNING_RATE)?;
        in_range("dqn.gamma", d.gamma, ranges::GAMMA)?;
        in_range("dqn.batch_size", d.batch_size, ranges::Q_BATCH)?;
        if d.replay_capacity < d.batch_size {
            return Err(invalid("dqn.replay_capacity", "must be >= dqn.batch_size"));
        }
        if d.target_sync == 0 {
            return Err(invalid("dqn.target_sync", "must be positive"));
        }
        in_range("dqn.epsilon_start", d.epsilon_start, (0.0, 1.0))?;
        in_range("dqn.epsilon_end", d.epsilon_end, (0.0, 1.0))?;
        in_range("dqn.epsilon_decay_fraction", d.epsilon_decay_fraction, (0.0, 1.0))?;

        let c = &self.coordinator;
        if !(c.kappa >= 0.0 && c.kappa < 1.0) {
            return Err(invalid("coordinator.kappa", format!("{} outside [0, 1)", c.kappa)));
        }
        if c.eval_window < 2 || c.eval_window > e.warmup {
            return Err(invalid(
                "coordinator.eval_window",
                format!("must lie in [2, env.warmup = {}]", e.warmup),
            ));
        }

        if self.mvo.window < 2 || self.mvo.window > e.warmup {
            return Err(invalid("mvo.window", format!("must lie in [2, env.warmup = {}]", e.warmup)));
        }
        if !(self.mvo.risk_aversion > 0.0 && self.mvo.risk_aversion.is_finite()) {
            return Err(invalid("mvo.risk_aversion", "must be positive"));
        }
        Ok(())
    }
}

/// Independent seed for one random stream of a run.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub const PPO_STREAM: u64 = 1;
pub const DQN_STREAM: u64 = 2;

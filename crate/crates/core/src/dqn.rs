//! Exploration agent: deep Q-learning over the extended universe.
//!
//! Action `0` proposes nothing; action `k >= 1` proposes extended asset `k - 1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, AdamState, DenseNet, GradBuffer, NetCheckpoint, NnError};
use crate::ppo::NetSpec;

pub const ABSTAIN: usize = 0;

#[derive(Debug, Error)]
pub enum DqnError {
    #[error("replay holds {have} transitions, batch needs {need}")]
    ReplayTooSmall { have: usize, need: usize },
    #[error("action {action} out of range for {actions} actions")]
    InvalidAction { action: usize, actions: usize },
    #[error("non-finite loss during update; parameters restored")]
    NonFiniteLoss,
    #[error("invalid DQN config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = DqnError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Updates between hard copies of the Q-network into the target network.
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of all training steps over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_dim: 64,
            activation: Activation::Relu,
            learning_rate: 1e-3,
            gamma: 0.5,
            batch_size: 32,
            replay_capacity: 50_000,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.3,
        }
    }
}

impl DqnConfig {
    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(DqnError::InvalidConfig(m.to_string()));
        if self.replay_capacity < self.batch_size || self.batch_size == 0 {
            return bad("replay_capacity must be >= batch_size > 0");
        }
        if ![self.epsilon_start, self.epsilon_end, self.gamma, self.epsilon_decay_fraction]
            .iter()
            .all(|x| (0.0..=1.0).contains(x))
        {
            return bad("epsilon values, decay fraction and gamma must lie in [0, 1]");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer with uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Transition> {
        self.sample_indices(n, rng)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// Linear decay from `start` to `end` over `decay_steps`, then constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: usize,
}

impl EpsilonSchedule {
    pub fn at(&self, step: usize) -> f64 {
        if self.decay_steps == 0 || step >= self.decay_steps {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / self.decay_steps as f64
    }
}

pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct DqnAgent {
    config: DqnConfig,
    q_net: DenseNet,
    target_net: DenseNet,
    opt: AdamState,
    replay: ReplayBuffer,
    schedule: EpsilonSchedule,
    explore_steps: usize,
    updates: usize,
    rng: ChaCha8Rng,
}

impl DqnAgent {
    /// `state_dim` is the augmented dimension; `n_extended` gives `m + 1` actions.
    pub fn new(state_dim: usize, n_extended: usize, config: DqnConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = NetSpec {
            hidden_layers: config.hidden_layers,
            hidden_dim: config.hidden_dim,
            activation: config.activation,
            dropout: 0.0,
        };
        let q_net = spec.build(state_dim, n_extended + 1, &mut rng)?;
        let target_net = q_net.clone();
        Ok(Self {
            opt: AdamState::for_net(&q_net, config.learning_rate),
            replay: ReplayBuffer::new(config.replay_capacity),
            schedule: EpsilonSchedule {
                start: config.epsilon_start,
                end: config.epsilon_end,
                decay_steps: 0,
            },
            explore_steps: 0,
            updates: 0,
            q_net,
            target_net,
            config,
            rng,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn n_actions(&self) -> usize {
        self.q_net.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.q_net.input_dim()
    }

    pub fn q_net(&self) -> &DenseNet {
        &self.q_net
    }

    pub fn q_net_mut(&mut self) -> &mut DenseNet {
        &mut self.q_net
    }

    pub fn target_net(&self) -> &DenseNet {
        &self.target_net
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Sets the decay horizon from the total number of exploring steps planned.
    pub fn plan_steps(&mut self, total_steps: usize) {
        self.schedule.decay_steps = (total_steps as f64 * self.config.epsilon_decay_fraction).round() as usize;
    }

    pub fn schedule(&self) -> EpsilonSchedule {
        self.schedule
    }

    pub fn set_schedule(&mut self, schedule: EpsilonSchedule) {
        self.schedule = schedule;
    }

    pub fn epsilon(&self) -> f64 {
        self.schedule.at(self.explore_steps)
    }

    pub fn q_values(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.q_net.predict(state)?)
    }

    pub fn greedy(&self, state: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(&self.q_values(state)?))
    }

    /// Epsilon-greedy when `explore`, greedy otherwise. Exploring calls advance
    /// the epsilon schedule.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<usize> {
        let greedy = self.greedy(state)?;
        if !explore {
            return Ok(greedy);
        }
        let eps = self.epsilon();
        self.explore_steps += 1;
        if self.rng.random::<f64>() < eps {
            Ok(self.rng.random_range(0..self.n_actions()))
        } else {
            Ok(greedy)
        }
    }

    pub fn remember(&mut self, t: Transition) -> Result<()> {
        if t.action >= self.n_actions() {
            return Err(DqnError::InvalidAction {
                action: t.action,
                actions: self.n_actions(),
            });
        }
        self.replay.push(t);
        Ok(())
    }

    /// Samples a batch from replay and runs one update.
    pub fn train_step(&mut self) -> Result<f64> {
        let need = self.config.batch_size;
        if self.replay.len() < need {
            return Err(DqnError::ReplayTooSmall {
                have: self.replay.len(),
                need,
            });
        }
        let idx = self.replay.sample_indices(need, &mut self.rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| &self.replay.items[i]).collect();
        let (loss, grads) = self.loss_and_grads(&batch)?;
        self.apply(loss, grads)
    }

    /// One optimizer step on an explicit batch.
    pub fn update(&mut self, batch: &[Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(DqnError::ReplayTooSmall { have: 0, need: 1 });
        }
        let refs: Vec<&Transition> = batch.iter().collect();
        let (loss, grads) = self.loss_and_grads(&refs)?;
        self.apply(loss, grads)
    }

    /// TD target `r + gamma * max_a Q_target(s', a)`, or `r` when terminal.
    pub fn target(&self, t: &Transition) -> Result<f64> {
        if t.done {
            return Ok(t.reward);
        }
        let next = self.target_net.predict(&t.next_state)?;
        Ok(t.reward + self.config.gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    }

    fn loss_and_grads(&self, batch: &[&Transition]) -> Result<(f64, GradBuffer)> {
        let b = batch.len() as f64;
        let mut grads = GradBuffer::zeros_like(&self.q_net);
        let mut loss = 0.0;
        let mut out_grad = vec![0.0; self.n_actions()];
        for t in batch {
            if t.action >= self.n_actions() {
                return Err(DqnError::InvalidAction {
                    action: t.action,
                    actions: self.n_actions(),
                });
            }
            let y = self.target(t)?;
            let (q, tape) = self.q_net.forward(&t.state)?;
            let err = q[t.action] - y;
            loss += err * err;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[t.action] = 2.0 * err / b;
            self.q_net.backward_into(&tape, &out_grad, &mut grads)?;
        }
        Ok((loss / b, grads))
    }

    fn apply(&mut self, loss: f64, grads: GradBuffer) -> Result<f64> {
        if !loss.is_finite() || !grads.is_finite() {
            return Err(DqnError::NonFiniteLoss);
        }
        let backup = (self.q_net.clone(), self.opt.clone());
        self.q_net.adam_step(&grads, &mut self.opt)?;
        if !self.q_net.is_finite() {
            (self.q_net, self.opt) = backup;
            return Err(DqnError::NonFiniteLoss);
        }
        self.updates += 1;
        if self.updates % self.config.target_sync == 0 {
            self.target_net.copy_params_from(&self.q_net)?;
        }
        Ok(loss)
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        self.q_net.to_checkpoint()
    }

    /// Loads the Q-network and resets the target network to it.
    pub fn load_checkpoint(&mut self, ckpt: &NetCheckpoint) -> Result<()> {
        self.q_net.load_checkpoint(ckpt)?;
        self.target_net.copy_params_from(&self.q_net)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn agent(dim: usize, m: usize, config: DqnConfig) -> DqnAgent {
        DqnAgent::new(dim, m, config, 11).unwrap()
    }

    fn small() -> DqnConfig {
        DqnConfig {
            hidden_layers: 1,
            hidden_dim: 16,
            batch_size: 4,
            replay_capacity: 100,
            ..DqnConfig::default()
        }
    }

    fn set_q(a: &mut DqnAgent, values: &[f64]) {
        let n = a.q_net().layers().len();
        let (w, b) = a.q_net_mut().layer_mut(n - 1);
        w.iter_mut().for_each(|x| *x = 0.0);
        b.copy_from_slice(values);
    }

    #[test]
    fn greedy_argmax_and_tie_break() {
        let mut a = agent(3, 2, small());
        set_q(&mut a, &[0.1, 0.9, 0.2]);
        assert_eq!(a.act(&[0.3, 0.1, 0.2], false).unwrap(), 1);
        set_q(&mut a, &[0.5, 0.5, 0.5]);
        assert_eq!(a.act(&[0.3, 0.1, 0.2], false).unwrap(), 0);
        assert_eq!(argmax_lowest(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut a = agent(2, 3, small());
        a.set_schedule(EpsilonSchedule { start: 1.0, end: 1.0, decay_steps: 0 });
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[a.act(&[0.0, 0.0], true).unwrap()] += 1;
        }
        let p = 0.25;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn epsilon_schedule_decays_linearly() {
        let mut a = agent(2, 1, small());
        a.plan_steps(1000);
        assert_eq!(a.schedule().decay_steps, 300);
        assert_eq!(a.epsilon(), 1.0);
        let s = a.schedule();
        assert!((s.at(150) - 0.525).abs() < 1e-12);
        assert_eq!(s.at(300), 0.05);
        assert_eq!(s.at(10_000), 0.05);
    }

    #[test]
    fn ring_buffer_evicts_oldest_and_samples_members() {
        let mut r = ReplayBuffer::new(3);
        for k in 0..4 {
            r.push(Transition {
                state: vec![k as f64],
                action: 0,
                reward: k as f64,
                next_state: vec![],
                done: true,
            });
        }
        let rewards: Vec<f64> = r.iter().map(|t| t.reward).collect();
        assert_eq!(r.len(), 3);
        assert!(!rewards.contains(&0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for t in r.sample(50, &mut rng) {
            assert!(rewards.contains(&t.reward));
        }
    }

    #[test]
    fn sampling_is_uniform() {
        let mut r = ReplayBuffer::new(10);
        for k in 0..10 {
            r.push(Transition {
                state: vec![],
                action: 0,
                reward: k as f64,
                next_state: vec![],
                done: true,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for i in r.sample_indices(draws, &mut rng) {
            counts[i] += 1;
        }
        let sd = (draws as f64 * 0.1 * 0.9).sqrt();
        assert!(counts.iter().all(|&c| (c as f64 - draws as f64 * 0.1).abs() < 3.0 * sd));
    }

    #[test]
    fn terminal_target_ignores_target_net() {
        let a = agent(2, 1, small());
        let t = Transition {
            state: vec![0.0, 1.0],
            action: 1,
            reward: 0.7,
            next_state: vec![100.0, -100.0],
            done: true,
        };
        assert_eq!(a.target(&t).unwrap(), 0.7);
    }

    #[test]
    fn zero_gamma_loss_is_regression_loss() {
        let a = agent(
            2,
            1,
            DqnConfig {
                gamma: 0.0,
                ..small()
            },
        );
        let batch: Vec<Transition> = (0..5)
            .map(|k| Transition {
                state: vec![k as f64 * 0.1, 1.0],
                action: k % 2,
                reward: k as f64,
                next_state: vec![1.0, 1.0],
                done: false,
            })
            .collect();
        let oracle: f64 = batch
            .iter()
            .map(|t| (a.q_values(&t.state).unwrap()[t.action] - t.reward).powi(2))
            .sum::<f64>()
            / 5.0;
        let mut a = a;
        let loss = a.update(&batch).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
    }

    #[test]
    fn replay_too_small_and_invalid_action() {
        let mut a = agent(2, 1, small());
        assert!(matches!(a.train_step(), Err(DqnError::ReplayTooSmall { have: 0, need: 4 })));
        let bad = Transition {
            state: vec![0.0, 0.0],
            action: 2,
            reward: 0.0,
            next_state: vec![0.0, 0.0],
            done: true,
        };
        assert!(a.remember(bad).is_err());
    }

    #[test]
    fn target_net_frozen_between_syncs() {
        let mut a = agent(
            2,
            1,
            DqnConfig {
                target_sync: 5,
                ..small()
            },
        );
        for k in 0..8 {
            a.remember(Transition {
                state: vec![k as f64, 1.0],
                action: k % 2,
                reward: 1.0,
                next_state: vec![0.0, 1.0],
                done: false,
            })
            .unwrap();
        }
        let initial = a.target_net().params().to_vec();
        for _ in 0..4 {
            a.train_step().unwrap();
            assert_eq!(a.target_net().params(), &initial[..]);
        }
        a.train_step().unwrap();
        let synced = a.q_net().params().to_vec();
        assert_eq!(a.target_net().params(), &synced[..]);
        for _ in 0..4 {
            a.train_step().unwrap();
            assert_eq!(a.target_net().params(), &synced[..]);
        }
    }

    #[test]
    fn dominant_action_becomes_greedy() {
        let mut a = agent(
            3,
            2,
            DqnConfig {
                gamma: 0.0,
                batch_size: 32,
                ..small()
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..600 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let action = rng.random_range(0..3);
            let reward = if action == 2 { 1.0 } else { -0.5 } + 0.1 * s[0];
            a.remember(Transition {
                next_state: s.clone(),
                state: s,
                action,
                reward,
                done: true,
            })
            .unwrap();
        }
        for _ in 0..1500 {
            a.train_step().unwrap();
        }
        let hits = (0..200)
            .filter(|_| {
                let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                a.greedy(&s).unwrap() == 2
            })
            .count();
        assert!(hits >= 190, "{hits}");
    }

    #[test]
    fn checkpoint_roundtrip_resets_target() {
        let src = agent(4, 2, small());
        let mut dst = DqnAgent::new(4, 2, small(), 99).unwrap();
        dst.load_checkpoint(&src.to_checkpoint()).unwrap();
        assert_eq!(dst.q_net().params(), src.q_net().params());
        assert_eq!(dst.target_net().params(), src.q_net().params());
        let mut wrong = DqnAgent::new(4, 3, small(), 1).unwrap();
        assert!(wrong.load_checkpoint(&src.to_checkpoint()).is_err());
    }
}

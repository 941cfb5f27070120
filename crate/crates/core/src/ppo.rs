//! Allocation agent: actor-critic PPO with the clipped surrogate objective over
//! the existing universe.
//!
//! The actor outputs mean logits. During training the logits are perturbed by
//! diagonal Gaussian noise with a learned, state-independent log-sigma, and
//! the portfolio weights are the softmax of the sampled logits. The recorded
//! log-density is that of the logit sample, so it is exact and differentiable.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{adam_step, softmax, Activation, AdamState, DenseNet, GradBuffer, NetCheckpoint, NnError};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;
const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("rollout is empty")]
    EmptyRollout,
    #[error("rollout has no advantages; call compute_advantages first")]
    MissingAdvantages,
    #[error("non-finite loss during update (epoch {epoch}); parameters restored")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

pub type Result<T, E = PpoError> = std::result::Result<T, E>;

/// Hidden-layer architecture shared by both agents' networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSpec {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub dropout: f64,
}

impl NetSpec {
    pub fn sizes(&self, input: usize, output: usize) -> Vec<usize> {
        let mut s = vec![input];
        s.extend(std::iter::repeat_n(self.hidden_dim, self.hidden_layers));
        s.push(output);
        s
    }

    pub fn build(&self, input: usize, output: usize, rng: &mut ChaCha8Rng) -> Result<DenseNet, NnError> {
        DenseNet::new(
            &self.sizes(input, output),
            self.activation,
            Activation::Linear,
            self.dropout,
            rng,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_dim: 64,
            activation: Activation::Tanh,
            dropout: 0.0,
            learning_rate: 3e-4,
            gamma: 0.9,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 10,
            minibatch_size: 64,
            init_log_std: -1.0,
        }
    }
}

impl PpoConfig {
    pub fn net(&self) -> NetSpec {
        NetSpec {
            hidden_layers: self.hidden_layers,
            hidden_dim: self.hidden_dim,
            activation: self.activation,
            dropout: self.dropout,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return bad("epochs and minibatch_size must be positive");
        }
        Ok(())
    }
}

/// One sampled (or deterministic) allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAction {
    pub weights: Vec<f64>,
    /// Logits actually used (sample in training, mean in evaluation).
    pub logits: Vec<f64>,
    pub log_density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub state: Vec<f64>,
    pub logits: Vec<f64>,
    pub log_density: f64,
    pub reward: f64,
    pub value: f64,
    /// True when the episode genuinely terminates after this step (no bootstrap).
    pub terminal: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Rollout {
    pub fn push(&mut self, step: RolloutStep) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
        self.advantages.clear();
        self.returns.clear();
    }
}

/// Generalized advantage estimates and return targets (`advantage + value`).
/// `last_value` bootstraps the state after the final step unless it is terminal.
pub fn compute_advantages(rollout: &mut Rollout, gamma: f64, lambda: f64, last_value: f64) -> Result<()> {
    if rollout.is_empty() {
        return Err(PpoError::EmptyRollout);
    }
    let n = rollout.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let step = &rollout.steps[t];
        let next_value = if t + 1 < n { rollout.steps[t + 1].value } else { last_value };
        let cont = if step.terminal { 0.0 } else { 1.0 };
        let delta = step.reward + gamma * cont * next_value - step.value;
        running = delta + gamma * lambda * cont * running;
        adv[t] = running;
    }
    rollout.returns = adv.iter().zip(&rollout.steps).map(|(a, s)| a + s.value).collect();
    rollout.advantages = adv;
    Ok(())
}

/// Zero-mean, unit-variance copy of the advantages.
pub fn normalize_advantages(adv: &[f64]) -> Vec<f64> {
    let m = crate::stats::mean(adv);
    let sd = crate::stats::population_std(adv);
    adv.iter().map(|a| (a - m) / (sd + 1e-8)).collect()
}

/// Clipped surrogate of one sample and whether the gradient flows through the ratio.
#[inline]
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        (unclipped, true)
    } else {
        (clipped, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateStats {
    /// `-mean(min(J A, clip(J) A))`.
    pub loss: f64,
    /// Fraction of samples with `|J - 1| > epsilon`.
    pub clip_fraction: f64,
}

pub fn surrogate_loss(ratios: &[f64], advantages: &[f64], epsilon: f64) -> SurrogateStats {
    let n = ratios.len().max(1) as f64;
    let mut total = 0.0;
    let mut clipped = 0usize;
    for (&j, &a) in ratios.iter().zip(advantages) {
        total += clipped_surrogate(j, a, epsilon).0;
        if (j - 1.0).abs() > epsilon {
            clipped += 1;
        }
    }
    SurrogateStats {
        loss: -total / n,
        clip_fraction: clipped as f64 / n,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoCheckpoint {
    pub actor: NetCheckpoint,
    pub critic: NetCheckpoint,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PpoAgent {
    config: PpoConfig,
    actor: DenseNet,
    critic: DenseNet,
    log_std: Vec<f64>,
    actor_opt: AdamState,
    critic_opt: AdamState,
    log_std_opt: AdamState,
    rng: ChaCha8Rng,
}

fn gaussian_log_density(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((z, m), ls)| {
            let u = (z - m) / ls.exp();
            -0.5 * u * u - ls - 0.5 * LOG_2PI
        })
        .sum()
}

impl PpoAgent {
    pub fn new(state_dim: usize, n_assets: usize, config: PpoConfig, seed: u64) -> Result<Self> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = config.net();
        let actor = net.build(state_dim, n_assets, &mut rng)?;
        let critic = net.build(state_dim, 1, &mut rng)?;
        Ok(Self {
            actor_opt: AdamState::for_net(&actor, config.learning_rate),
            critic_opt: AdamState::for_net(&critic, config.learning_rate),
            log_std_opt: AdamState::new(n_assets, config.learning_rate),
            log_std: vec![config.init_log_std; n_assets],
            actor,
            critic,
            config,
            rng,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn n_assets(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut DenseNet {
        &mut self.actor
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn set_log_std(&mut self, value: f64) {
        self.log_std.iter_mut().for_each(|l| *l = value);
    }

    pub fn mean_logits(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.actor.predict(state)?)
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.critic.predict(state)?[0])
    }

    pub fn log_density(&self, state: &[f64], logits: &[f64]) -> Result<f64> {
        Ok(gaussian_log_density(logits, &self.mean_logits(state)?, &self.log_std))
    }

    /// Portfolio weights for `state`, sampled in training mode and the softmax
    /// of the mean logits in evaluation mode.
    pub fn act(&mut self, state: &[f64], mode: ActMode) -> Result<PolicyAction> {
        let mean = self.mean_logits(state)?;
        let logits = match mode {
            ActMode::Eval => mean.clone(),
            ActMode::Train => mean
                .iter()
                .zip(&self.log_std)
                .map(|(m, ls)| {
                    let e: f64 = StandardNormal.sample(&mut self.rng);
                    m + ls.exp() * e
                })
                .collect(),
        };
        let log_density = gaussian_log_density(&logits, &mean, &self.log_std);
        Ok(PolicyAction {
            weights: softmax(&logits),
            logits,
            log_density,
        })
    }

    /// Deterministic weights, usable through a shared reference.
    pub fn act_eval(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.mean_logits(state)?))
    }

    /// Clipped surrogate of the current policy over the whole rollout, with
    /// normalized advantages and an arbitrary clip range.
    pub fn evaluate_surrogate(&self, rollout: &Rollout, epsilon: f64) -> Result<SurrogateStats> {
        if rollout.is_empty() {
            return Err(PpoError::EmptyRollout);
        }
        if rollout.advantages.len() != rollout.len() {
            return Err(PpoError::MissingAdvantages);
        }
        let adv = normalize_advantages(&rollout.advantages);
        let ratios = rollout
            .steps
            .iter()
            .map(|s| Ok((self.log_density(&s.state, &s.logits)? - s.log_density).exp()))
            .collect::<Result<Vec<f64>>>()?;
        Ok(surrogate_loss(&ratios, &adv, epsilon))
    }

    /// Runs `epochs` passes of minibatch Adam updates on the clipped objective.
    /// On a non-finite loss the parameters from before the call are restored.
    pub fn update(&mut self, rollout: &Rollout) -> Result<PpoStats> {
        if rollout.is_empty() {
            return Err(PpoError::EmptyRollout);
        }
        if rollout.advantages.len() != rollout.len() {
            return Err(PpoError::MissingAdvantages);
        }
        let backup = (
            self.actor.clone(),
            self.critic.clone(),
            self.log_std.clone(),
            self.actor_opt.clone(),
            self.critic_opt.clone(),
            self.log_std_opt.clone(),
        );
        let result = self.update_inner(rollout);
        if result.is_err() {
            (
                self.actor,
                self.critic,
                self.log_std,
                self.actor_opt,
                self.critic_opt,
                self.log_std_opt,
            ) = backup;
        }
        result
    }

    fn update_inner(&mut self, rollout: &Rollout) -> Result<PpoStats> {
        let adv = normalize_advantages(&rollout.advantages);
        let eps = self.config.clip_epsilon;
        let n_assets = self.n_assets();
        let mut order: Vec<usize> = (0..rollout.len()).collect();
        let mut actor_grads = GradBuffer::zeros_like(&self.actor);
        let mut critic_grads = GradBuffer::zeros_like(&self.critic);
        let mut log_std_grads = vec![0.0; n_assets];

        let (mut policy_sum, mut value_sum, mut clipped, mut samples) = (0.0, 0.0, 0usize, 0usize);
        for epoch in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for batch in order.chunks(self.config.minibatch_size) {
                actor_grads.zero();
                critic_grads.zero();
                log_std_grads.iter_mut().for_each(|g| *g = 0.0);
                let b = batch.len() as f64;
                let sigma: Vec<f64> = self.log_std.iter().map(|l| l.exp()).collect();
                let (mut policy_loss, mut value_loss) = (0.0, 0.0);
                for &k in batch {
                    let step = &rollout.steps[k];
                    let (mean, tape) = self.actor.forward_train(&step.state, &mut self.rng)?;
                    let logp = gaussian_log_density(&step.logits, &mean, &self.log_std);
                    let ratio = (logp - step.log_density).exp();
                    let (surr, flows) = clipped_surrogate(ratio, adv[k], eps);
                    policy_loss -= surr;
                    if (ratio - 1.0).abs() > eps {
                        clipped += 1;
                    }
                    if flows {
                        // d(-J A)/d logp = -J A
                        let coef = -ratio * adv[k] / b;
                        let mut out_grad = vec![0.0; n_assets];
                        for i in 0..n_assets {
                            let u = (step.logits[i] - mean[i]) / sigma[i];
                            out_grad[i] = coef * u / sigma[i];
                            log_std_grads[i] += coef * (u * u - 1.0);
                        }
                        self.actor.backward_into(&tape, &out_grad, &mut actor_grads)?;
                    }
                    let (v, vtape) = self.critic.forward_train(&step.state, &mut self.rng)?;
                    let err = v[0] - rollout.returns[k];
                    value_loss += err * err;
                    self.critic.backward_into(
                        &vtape,
                        &[self.config.value_coef * 2.0 * err / b],
                        &mut critic_grads,
                    )?;
                }
                // entropy bonus: H = sum(log sigma) + const
                for g in log_std_grads.iter_mut() {
                    *g -= self.config.entropy_coef;
                }
                let entropy = self.entropy();
                let loss = policy_loss / b + self.config.value_coef * value_loss / b - self.config.entropy_coef * entropy;
                if !loss.is_finite() || !actor_grads.is_finite() || !critic_grads.is_finite() {
                    return Err(PpoError::NonFiniteLoss { epoch });
                }
                self.actor.adam_step(&actor_grads, &mut self.actor_opt)?;
                self.critic.adam_step(&critic_grads, &mut self.critic_opt)?;
                adam_step(&mut self.log_std, &log_std_grads, &mut self.log_std_opt)?;
                for l in self.log_std.iter_mut() {
                    *l = l.clamp(LOG_STD_MIN, LOG_STD_MAX);
                }
                policy_sum += policy_loss;
                value_sum += value_loss;
                samples += batch.len();
            }
        }
        let s = samples.max(1) as f64;
        Ok(PpoStats {
            policy_loss: policy_sum / s,
            value_loss: value_sum / s,
            entropy: self.entropy(),
            clip_fraction: clipped as f64 / s,
        })
    }

    /// Differential entropy of the logit distribution.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| l + 0.5 * (LOG_2PI + 1.0)).sum()
    }

    pub fn to_checkpoint(&self) -> PpoCheckpoint {
        PpoCheckpoint {
            actor: self.actor.to_checkpoint(),
            critic: self.critic.to_checkpoint(),
            log_std: self.log_std.clone(),
        }
    }

    /// Loads parameters; every shape must match this agent's networks.
    pub fn load_checkpoint(&mut self, ckpt: &PpoCheckpoint) -> Result<()> {
        if ckpt.log_std.len() != self.log_std.len() {
            return Err(NnError::ShapeMismatch(format!(
                "log_std has {} entries, agent has {}",
                ckpt.log_std.len(),
                self.log_std.len()
            ))
            .into());
        }
        self.actor.load_checkpoint(&ckpt.actor)?;
        self.critic.load_checkpoint(&ckpt.critic)?;
        self.log_std.copy_from_slice(&ckpt.log_std);
        Ok(())
    }
}

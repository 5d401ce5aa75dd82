//! Clipped-surrogate PPO with a squashed Gaussian policy.
//!
//! The actor outputs the mean of a diagonal Gaussian over a pre-squash value
//! `u`; the environment receives `tanh(u)`. Log-probabilities are taken on
//! `u`, so the squash never enters the ratio. The critic is a separate
//! network with a linear output.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::PpoConfig;
use super::OrchestratorError;
use crate::envs::Environment;
use crate::nn::{adam_step, layer_stack, Activation, AdamConfig, AdamMoments, AdamState, Checkpoint, ForwardCache, Gradients, Mlp};
use crate::reward::RewardError;
use crate::types::{ActionVector, StateVector};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
/// Scale applied to the freshly initialised actor output layer so the
/// initial policy mean sits near zero.
const ACTOR_OUTPUT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub actor: Mlp,
    pub critic: Mlp,
    pub log_std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    /// Pre-squash Gaussian draw.
    pub u: Vec<f64>,
    pub action: ActionVector,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyCheckpoint {
    actor: Checkpoint,
    critic: Checkpoint,
    log_std: Vec<f64>,
}

/// `log N(u; mean, exp(log_std)^2)` summed over dimensions.
pub fn gaussian_log_prob(u: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    u.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&u, &m), &ls)| {
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

fn squash(u: &[f64]) -> ActionVector {
    ActionVector(u.iter().map(|v| v.tanh()).collect())
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, config: &PpoConfig, rng: &mut R) -> Result<Self, OrchestratorError> {
        let mut actor = Mlp::init(&layer_stack(obs_dim, &config.hidden, Activation::Relu, action_dim, Activation::Identity), rng)?;
        if let Some(last) = actor.layers_mut().last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= ACTOR_OUTPUT_SCALE);
        }
        let critic = Mlp::init(&layer_stack(obs_dim, &config.hidden, Activation::Relu, 1, Activation::Identity), rng)?;
        Ok(Self { actor, critic, log_std: vec![config.init_log_std; action_dim] })
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>, OrchestratorError> {
        Ok(self.actor.predict(obs)?)
    }

    pub fn value(&self, obs: &[f64]) -> Result<f64, OrchestratorError> {
        Ok(self.critic.predict(obs)?[0])
    }

    pub fn sample<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<ActionSample, OrchestratorError> {
        let mean = self.mean(obs)?;
        let u: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(&m, &ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_prob = gaussian_log_prob(&u, &mean, &self.log_std);
        Ok(ActionSample { action: squash(&u), u, log_prob })
    }

    /// Squashed mean action.
    pub fn deterministic(&self, obs: &[f64]) -> Result<ActionVector, OrchestratorError> {
        Ok(squash(&self.mean(obs)?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OrchestratorError> {
        let ckpt = PolicyCheckpoint {
            actor: self.actor.to_checkpoint(),
            critic: self.critic.to_checkpoint(),
            log_std: self.log_std.clone(),
        };
        std::fs::write(path, serde_json::to_vec_pretty(&ckpt)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let ckpt: PolicyCheckpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        let actor = Mlp::from_checkpoint(ckpt.actor)?;
        let critic = Mlp::from_checkpoint(ckpt.critic)?;
        if ckpt.log_std.len() != actor.output_dim() {
            return Err(OrchestratorError::Config("log-std length does not match the actor".into()));
        }
        Ok(Self { actor, critic, log_std: ckpt.log_std })
    }
}

/// Generalised advantage estimates and the matching value targets.
/// `dones[t]` marks that the episode ended after step `t`; `last_value`
/// bootstraps the step after the buffer.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// `d/d(log_prob)` of the per-sample loss `-min(ρA, clip(ρ, 1-ε, 1+ε)A)`,
/// where `ρ = exp(log_prob - old_log_prob)`. Zero whenever the clipped
/// branch is the active one.
pub fn surrogate_grad(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    if unclipped <= clipped {
        -advantage * ratio
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Buffer {
    obs: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    log_prob: Vec<f64>,
    value: Vec<f64>,
    reward: Vec<f64>,
    done: Vec<bool>,
}

impl Buffer {
    fn clear(&mut self) {
        *self = Self::default();
    }
}

/// What happened during one call to [`PpoTrainer::learn`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LearnStats {
    pub timesteps: usize,
    pub episodes_finished: usize,
    pub mean_reward: f64,
    /// Mean social-force gain over the collected steps, if the environment has one.
    pub mean_gain: Option<f64>,
}

/// Policy plus optimizer state and the in-progress episode.
pub struct PpoTrainer {
    pub policy: Policy,
    pub config: PpoConfig,
    actor_adam: AdamState,
    critic_adam: AdamState,
    log_std_adam: AdamMoments,
    log_std_step: u64,
    current_obs: Option<StateVector>,
    buffer: Buffer,
}

impl PpoTrainer {
    pub fn new(policy: Policy, config: PpoConfig) -> Self {
        let adam = AdamConfig::with_lr(config.lr);
        Self {
            actor_adam: AdamState::new(&policy.actor, adam),
            critic_adam: AdamState::new(&policy.critic, adam),
            log_std_adam: AdamMoments::zeros(policy.log_std.len()),
            log_std_step: 0,
            current_obs: None,
            buffer: Buffer::default(),
            policy,
            config,
        }
    }

    /// Runs whole rollouts of `n_steps` until at least `timesteps` steps have
    /// been collected, updating after each. The reward of every transition
    /// comes from `reward_fn(state, action)`; the environment's own reward is
    /// never consulted.
    pub fn learn<E, F, R>(&mut self, env: &mut E, timesteps: usize, mut reward_fn: F, rng: &mut R) -> Result<LearnStats, OrchestratorError>
    where
        E: Environment + ?Sized,
        F: FnMut(&[f64], &[f64]) -> Result<f64, RewardError>,
        R: Rng + ?Sized,
    {
        let mut stats = LearnStats::default();
        let mut reward_sum = 0.0;
        let mut gain_sum = 0.0;
        let mut gain_count = 0usize;
        while stats.timesteps < timesteps {
            self.buffer.clear();
            let mut obs = match self.current_obs.take() {
                Some(o) => o,
                None => env.reset(),
            };
            for _ in 0..self.config.n_steps {
                let sample = self.policy.sample(obs.as_slice(), rng)?;
                let value = self.policy.value(obs.as_slice())?;
                let r = reward_fn(obs.as_slice(), sample.action.as_slice())?;
                let outcome = env.step(&sample.action)?;
                if let Some(g) = env.gain() {
                    gain_sum += g;
                    gain_count += 1;
                }
                reward_sum += r;
                self.buffer.obs.push(obs.0);
                self.buffer.u.push(sample.u);
                self.buffer.log_prob.push(sample.log_prob);
                self.buffer.value.push(value);
                self.buffer.reward.push(r);
                self.buffer.done.push(outcome.done);
                obs = if outcome.done {
                    stats.episodes_finished += 1;
                    env.reset()
                } else {
                    outcome.observation
                };
            }
            let last_value = self.policy.value(obs.as_slice())?;
            self.current_obs = Some(obs);
            stats.timesteps += self.config.n_steps;
            self.update(last_value, rng)?;
        }
        stats.mean_reward = reward_sum / stats.timesteps.max(1) as f64;
        stats.mean_gain = (gain_count > 0).then(|| gain_sum / gain_count as f64);
        Ok(stats)
    }

    /// Forgets the in-progress episode so the next rollout starts with a reset.
    pub fn end_episode(&mut self) {
        self.current_obs = None;
    }

    fn update<R: Rng + ?Sized>(&mut self, last_value: f64, rng: &mut R) -> Result<(), OrchestratorError> {
        let cfg = self.config.clone();
        let b = &self.buffer;
        let (advantages, returns) = compute_gae(&b.reward, &b.value, &b.done, last_value, cfg.gamma, cfg.gae_lambda);
        let n = b.reward.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut actor_grads = Gradients::zeros_like(&self.policy.actor);
        let mut critic_grads = Gradients::zeros_like(&self.policy.critic);
        let mut cache = ForwardCache::default();
        let dim = self.policy.log_std.len();
        for _ in 0..cfg.n_epochs {
            order.shuffle(rng);
            for chunk in order.chunks(cfg.batch_size) {
                let m = chunk.len() as f64;
                let mut adv: Vec<f64> = chunk.iter().map(|&i| advantages[i]).collect();
                if cfg.normalize_advantage && chunk.len() > 1 {
                    let mean = adv.iter().sum::<f64>() / m;
                    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (m - 1.0);
                    let sd = var.sqrt() + 1e-8;
                    adv.iter_mut().for_each(|a| *a = (*a - mean) / sd);
                }
                actor_grads.fill_zero();
                critic_grads.fill_zero();
                let std: Vec<f64> = self.policy.log_std.iter().map(|l| l.exp()).collect();
                // Entropy is state-independent: H = Σ log_std + const.
                let mut log_std_grad = vec![-cfg.ent_coef; dim];
                let mut mean_grad = vec![0.0; dim];
                for (&i, &a) in chunk.iter().zip(&adv) {
                    let u = &b.u[i];
                    self.policy.actor.forward_with(&b.obs[i], &mut cache)?;
                    let mean = cache.output();
                    let log_prob = gaussian_log_prob(u, mean, &self.policy.log_std);
                    let ratio = (log_prob - b.log_prob[i]).exp();
                    let g = surrogate_grad(ratio, a, cfg.clip_range) / m;
                    for k in 0..dim {
                        let z = (u[k] - mean[k]) / std[k];
                        mean_grad[k] = g * z / std[k];
                        log_std_grad[k] += g * (z * z - 1.0);
                    }
                    self.policy.actor.backward_into(&cache, &mean_grad, &mut actor_grads)?;

                    self.policy.critic.forward_with(&b.obs[i], &mut cache)?;
                    let v = cache.output()[0];
                    let dv = 2.0 * cfg.vf_coef * (v - returns[i]) / m;
                    self.policy.critic.backward_into(&cache, &[dv], &mut critic_grads)?;
                }
                let norm = (actor_grads.squared_norm()
                    + critic_grads.squared_norm()
                    + log_std_grad.iter().map(|g| g * g).sum::<f64>())
                .sqrt();
                if norm > cfg.max_grad_norm {
                    let s = cfg.max_grad_norm / (norm + 1e-6);
                    actor_grads.scale(s);
                    critic_grads.scale(s);
                    log_std_grad.iter_mut().for_each(|g| *g *= s);
                }
                if log_std_grad.iter().any(|g| !g.is_finite()) {
                    return Err(OrchestratorError::NonFinite("log-std gradient".into()));
                }
                adam_step(&mut self.policy.actor, &actor_grads, &mut self.actor_adam)?;
                adam_step(&mut self.policy.critic, &critic_grads, &mut self.critic_adam)?;
                self.log_std_step += 1;
                let adam = AdamConfig::with_lr(cfg.lr);
                self.log_std_adam.update(&mut self.policy.log_std, &log_std_grad, self.log_std_step, &adam);
            }
        }
        Ok(())
    }
}

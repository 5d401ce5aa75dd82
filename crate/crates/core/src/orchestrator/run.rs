//! The outer loop: label, fit the reward model, train the policy on it, repeat.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::eval::evaluate_policy;
use super::log::{ExperimentLog, LogEntry, RunMeta};
use super::ppo::{Policy, PpoTrainer};
use super::segments::sample_segments;
use super::source::{FeedbackSource, LabelRequest};
use super::OrchestratorError;
use crate::dataset::{load_dataset, save_dataset, DatasetStore};
use crate::envs::{CountingEnv, Environment};
use crate::feedback::sample_query_pairs;
use crate::nn::Mlp;
use crate::reward::{LossBreakdown, RewardLearner, RewardModel, RewardTrainConfig, TrainPhase};
use crate::rng::{seeded_rng, StreamRng};
use crate::types::{FeatureDescriptor, SegmentId};

pub const CONFIG_FILE: &str = "config.json";
pub const STATE_FILE: &str = "state.json";
pub const POLICY_FILE: &str = "policy.json";
pub const REWARD_FILE: &str = "reward.json";
pub const LOG_FILE: &str = "log.json";
pub const DATASET_DIR: &str = "dataset";

/// Loop progress persisted alongside the checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub timesteps: usize,
    pub queries_labeled: usize,
    pub episodes: u64,
    /// Set while a labeling phase has started but not completed.
    pub pending_labels: bool,
    /// Features after the source has seen the first segments.
    pub features: Option<Vec<FeatureDescriptor>>,
    pub true_returns: Vec<(SegmentId, f64)>,
}

struct Streams {
    ppo: StreamRng,
    segments: StreamRng,
    queries: StreamRng,
    reward: StreamRng,
    oracle: StreamRng,
}

impl Streams {
    /// Streams are keyed by the timestep they start at, so a resumed run
    /// draws from fresh but reproducible streams.
    fn at(seed: u64, t: usize) -> Self {
        let s = |name: &str| seeded_rng(seed, &format!("{name}@{t}"));
        Self { ppo: s("ppo"), segments: s("segments"), queries: s("queries"), reward: s("reward-train"), oracle: s("oracle") }
    }
}

/// Everything a finished run produced.
pub struct RunArtifacts {
    pub log: ExperimentLog,
    pub policy: Policy,
    pub reward: RewardModel,
    pub dataset: DatasetStore,
    /// True-reward reads made through the policy-training environment.
    pub training_true_reward_reads: usize,
}

pub struct Experiment<'s> {
    config: ExperimentConfig,
    reward_config: RewardTrainConfig,
    source: &'s mut dyn FeedbackSource,
    out_dir: Option<PathBuf>,
    train_env: CountingEnv<Box<dyn Environment>>,
    segment_env: Box<dyn Environment>,
    trainer: PpoTrainer,
    learner: RewardLearner,
    dataset: DatasetStore,
    log: ExperimentLog,
    state: RunState,
    rngs: Streams,
    last_loss: Option<LossBreakdown>,
}

fn default_features(config: &ExperimentConfig) -> Result<Vec<FeatureDescriptor>, OrchestratorError> {
    let all = config.env.kind().default_features();
    let Some(names) = &config.schedule.features else {
        return Ok(all);
    };
    names
        .iter()
        .map(|n| {
            all.iter()
                .find(|f| f.name.eq_ignore_ascii_case(n.trim()))
                .cloned()
                .ok_or_else(|| OrchestratorError::Config(format!("feature {n:?} is not available for {}", config.env.kind())))
        })
        .collect()
}

impl<'s> Experiment<'s> {
    pub fn new(config: ExperimentConfig, source: &'s mut dyn FeedbackSource) -> Result<Self, OrchestratorError> {
        config.validate()?;
        default_features(&config)?;
        let seed = config.seed;
        let train_env = config.env.build(seeded_rng(seed, "train-env@0"))?;
        let segment_env = config.env.build(seeded_rng(seed, "segment-env@0"))?;
        let (obs, act) = (train_env.obs_dim(), train_env.action_dim());
        let policy = Policy::new(obs, act, &config.ppo, &mut seeded_rng(seed, "policy-init"))?;
        let reward_config = config.schedule.mode.apply(&config.reward);
        let model = RewardModel::new(obs, act, &reward_config.hidden, &mut seeded_rng(seed, "reward-init"))?;
        Ok(Self {
            trainer: PpoTrainer::new(policy, config.ppo.clone()),
            learner: RewardLearner::new(model, reward_config.clone()),
            train_env: CountingEnv::new(train_env),
            segment_env,
            reward_config,
            source,
            out_dir: None,
            dataset: DatasetStore::new(),
            log: ExperimentLog { meta: RunMeta::new(&config), entries: vec![] },
            state: RunState::default(),
            rngs: Streams::at(seed, 0),
            last_loss: None,
            config,
        })
    }

    /// Continues from a checkpoint directory written by an earlier run.
    /// Optimizer moments restart from zero.
    pub fn resume(dir: impl AsRef<Path>, source: &'s mut dyn FeedbackSource) -> Result<Self, OrchestratorError> {
        let dir = dir.as_ref();
        let config: ExperimentConfig = serde_json::from_slice(&std::fs::read(dir.join(CONFIG_FILE))?)?;
        let state: RunState = serde_json::from_slice(&std::fs::read(dir.join(STATE_FILE))?)?;
        let mut exp = Self::new(config, source)?;
        let (seed, t) = (exp.config.seed, state.timesteps);
        exp.train_env = CountingEnv::new(exp.config.env.build(seeded_rng(seed, &format!("train-env@{t}")))?);
        exp.segment_env = exp.config.env.build(seeded_rng(seed, &format!("segment-env@{t}")))?;
        exp.trainer = PpoTrainer::new(Policy::load(dir.join(POLICY_FILE))?, exp.config.ppo.clone());
        let mut model = exp.learner.model.clone();
        model.net = Mlp::load_checkpoint(dir.join(REWARD_FILE))?;
        exp.learner = RewardLearner::new(model, exp.reward_config.clone());
        exp.dataset = load_dataset(dir.join(DATASET_DIR))?;
        exp.log = ExperimentLog::load(dir.join(LOG_FILE))?;
        exp.rngs = Streams::at(seed, t);
        if exp.source.needs_true_returns() {
            exp.source.record_true_returns(&state.true_returns);
        }
        exp.state = state;
        exp.out_dir = Some(dir.to_path_buf());
        Ok(exp)
    }

    /// Writes a checkpoint to `dir` after every logged entry.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn checkpoint(&self, dir: &Path) -> Result<(), OrchestratorError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_FILE), serde_json::to_vec_pretty(&self.config)?)?;
        std::fs::write(dir.join(STATE_FILE), serde_json::to_vec(&self.state)?)?;
        self.trainer.policy.save(dir.join(POLICY_FILE))?;
        self.learner.model.net.save_checkpoint(dir.join(REWARD_FILE))?;
        save_dataset(&self.dataset, dir.join(DATASET_DIR))?;
        self.log.save(dir.join(LOG_FILE))?;
        Ok(())
    }

    fn save_if_configured(&self) -> Result<(), OrchestratorError> {
        match &self.out_dir {
            Some(dir) => self.checkpoint(dir),
            None => Ok(()),
        }
    }

    /// Samples fresh segments, labels `count` pairs drawn from the whole
    /// pool and fits the reward model.
    fn label_and_fit(&mut self, count: usize, phase: TrainPhase) -> Result<(), OrchestratorError> {
        let schedule = &self.config.schedule;
        let n_segments = (count * schedule.segments_per_query).max(2);
        let read_true = self.source.needs_true_returns();
        let sampled = sample_segments(
            &mut *self.segment_env,
            &self.trainer.policy,
            n_segments,
            schedule.segment_len,
            read_true,
            &mut self.state.episodes,
            &mut self.rngs.segments,
        )?;
        if read_true {
            let returns: Vec<(SegmentId, f64)> =
                sampled.iter().filter_map(|s| Some((s.segment.segment_id.clone(), s.true_return?))).collect();
            self.source.record_true_returns(&returns);
            self.state.true_returns.extend(returns);
        }
        let segments: Vec<_> = sampled.into_iter().map(|s| s.segment).collect();
        let features = match self.state.features.clone() {
            Some(f) => f,
            None => {
                let f = self.source.prepare(&segments, &default_features(&self.config)?)?;
                self.log.meta.features = f.clone();
                self.state.features = Some(f.clone());
                f
            }
        };
        self.dataset.add_segments(segments);
        let pairs = sample_query_pairs(self.dataset.segments.len(), count, &mut self.rngs.queries)?
            .into_iter()
            .map(|(i, j)| (self.dataset.segments[i].clone(), self.dataset.segments[j].clone()))
            .collect();
        let request = LabelRequest {
            pairs,
            want_highlights: self.config.schedule.mode.wants_highlights(),
            features: &features,
            highlight_len: self.reward_config.highlight_len,
        };
        let labels = self.source.label(request, &mut self.rngs.oracle)?;
        if labels.len() < count {
            tracing::warn!(requested = count, received = labels.len(), "fewer labels than requested");
        }
        for shq in labels {
            shq.validate(self.reward_config.highlight_len)?;
            self.dataset.add_labeled(shq);
            self.state.queries_labeled += 1;
        }
        if self.dataset.labeled.is_empty() {
            return Err(OrchestratorError::NoLabels);
        }
        let curve = self.learner.train(&self.dataset.labeled, phase, &mut self.rngs.reward)?;
        self.last_loss = curve.last().map(|e| e.loss);
        Ok(())
    }

    /// Runs a labeling phase, leaving a resumable checkpoint if the source fails.
    fn labeling_phase(&mut self, count: usize, phase: TrainPhase) -> Result<(), OrchestratorError> {
        self.state.pending_labels = true;
        if let Err(e) = self.label_and_fit(count, phase) {
            self.save_if_configured()?;
            return Err(e);
        }
        self.state.pending_labels = false;
        Ok(())
    }

    fn log_entry(&mut self, mean_gain: Option<f64>) -> Result<(), OrchestratorError> {
        let schedule = &self.config.schedule;
        let eval = evaluate_policy(
            &self.trainer.policy,
            &self.config.env,
            schedule.eval_episodes,
            self.config.seed,
            Some(&self.learner.model),
        )?;
        let entry = LogEntry {
            timestep: self.state.timesteps,
            true_return: eval.mean_return,
            true_return_stderr: eval.stderr,
            model_return: eval.model_return.unwrap_or(0.0),
            queries_labeled: self.state.queries_labeled,
            reward_loss: self.last_loss.take(),
            mean_gain,
            eval_mean_gain: eval.mean_gain,
            llm_fallbacks: self.source.llm_fallbacks(),
        };
        tracing::info!(
            timestep = entry.timestep,
            true_return = entry.true_return,
            queries = entry.queries_labeled,
            "evaluation"
        );
        self.log.entries.push(entry);
        self.save_if_configured()
    }

    fn remaining_queries(&self) -> usize {
        self.config.schedule.queries.saturating_sub(self.state.queries_labeled)
    }

    pub fn run(mut self) -> Result<RunArtifacts, OrchestratorError> {
        let schedule = self.config.schedule.clone();
        if self.log.entries.is_empty() {
            if self.dataset.labeled.is_empty() || self.state.pending_labels {
                let n = schedule.initial_queries().min(self.remaining_queries()).max(1);
                self.labeling_phase(n, TrainPhase::Initial)?;
            }
            self.log_entry(None)?;
        }
        while self.state.timesteps < schedule.total_timesteps {
            if self.state.pending_labels {
                let n = schedule.update_queries().min(self.remaining_queries());
                if n > 0 {
                    self.labeling_phase(n, TrainPhase::Update)?;
                }
                self.state.pending_labels = false;
                // The chunk before the interrupted phase was never logged.
                self.log_entry(None)?;
            }
            let chunk = schedule
                .reward_update_interval
                .unwrap_or(schedule.eval_interval)
                .min(schedule.total_timesteps - self.state.timesteps);
            let model = &self.learner.model;
            let stats = self.trainer.learn(&mut self.train_env, chunk, |s, a| model.reward_of(s, a), &mut self.rngs.ppo)?;
            self.state.timesteps += stats.timesteps;
            let n = schedule.update_queries().min(self.remaining_queries());
            if schedule.reward_update_interval.is_some() && n > 0 && self.state.timesteps < schedule.total_timesteps {
                self.labeling_phase(n, TrainPhase::Update)?;
            }
            self.log_entry(stats.mean_gain)?;
        }
        Ok(RunArtifacts {
            training_true_reward_reads: self.train_env.true_reward_reads(),
            log: self.log,
            policy: self.trainer.policy,
            reward: self.learner.model,
            dataset: self.dataset,
        })
    }
}

/// Runs a fresh experiment to completion without writing checkpoints.
pub fn run_experiment(config: ExperimentConfig, source: &mut dyn FeedbackSource) -> Result<RunArtifacts, OrchestratorError> {
    Experiment::new(config, source)?.run()
}

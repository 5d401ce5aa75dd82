use std::fmt;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, EnvKind};
use crate::feedback::{LlmProviderConfig, OracleConfig};
use crate::reward::RewardTrainConfig;

use super::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub n_steps: usize,
    pub n_epochs: usize,
    pub gae_lambda: f64,
    pub clip_range: f64,
    pub ent_coef: f64,
    pub vf_coef: f64,
    /// Global gradient-norm clip over actor, critic and log-std together.
    pub max_grad_norm: f64,
    pub normalize_advantage: bool,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            lr: 3e-4,
            batch_size: 128,
            gamma: 0.99,
            n_steps: 1024,
            n_epochs: 10,
            gae_lambda: 0.99,
            clip_range: 0.2,
            ent_coef: 5e-4,
            vf_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantage: true,
            init_log_std: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let ok = self.lr > 0.0
            && self.batch_size > 0
            && self.n_steps > 0
            && self.n_epochs > 0
            && (0.0..=1.0).contains(&self.gamma)
            && (0.0..=1.0).contains(&self.gae_lambda)
            && self.clip_range > 0.0
            && self.max_grad_norm > 0.0
            && self.hidden.iter().all(|&h| h > 0);
        if ok {
            Ok(())
        } else {
            Err(OrchestratorError::Config("invalid PPO settings".into()))
        }
    }
}

/// How labels are turned into training signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Preference loss plus highlight regularisation.
    Predilect,
    /// Preference loss only; no highlights are requested.
    Baseline,
    /// Highlight terms only; the cross-entropy is reported but not optimised.
    HighlightsOnly,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Predilect => "predilect",
            Mode::Baseline => "baseline",
            Mode::HighlightsOnly => "highlights_only",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace('-', "_").as_str() {
            "predilect" => Some(Mode::Predilect),
            "baseline" => Some(Mode::Baseline),
            "highlights_only" => Some(Mode::HighlightsOnly),
            _ => None,
        }
    }

    pub fn wants_highlights(self) -> bool {
        self != Mode::Baseline
    }

    /// The reward-training settings this mode actually uses.
    pub fn apply(self, reward: &RewardTrainConfig) -> RewardTrainConfig {
        let mut out = reward.clone();
        match self {
            Mode::Predilect => {}
            Mode::Baseline => {
                out.alpha_pos = 0.0;
                out.alpha_neg = 0.0;
            }
            Mode::HighlightsOnly => out.use_preference_loss = false,
        }
        out
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Who produces labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackKind {
    /// Thresholded oracle triplets used directly.
    Oracle,
    /// Oracle triplets rendered as text and sent through the LLM provider.
    Llm,
    /// Labels come from people through the query service.
    Human,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub total_timesteps: usize,
    /// Total query budget `N`.
    pub queries: usize,
    pub initial_fraction: f64,
    pub update_fraction: f64,
    /// Timesteps between reward updates; `None` labels the whole budget up front.
    pub reward_update_interval: Option<usize>,
    /// Evaluation cadence when there are no reward updates.
    pub eval_interval: usize,
    pub segment_len: usize,
    /// New segments collected per query requested in a phase.
    pub segments_per_query: usize,
    pub eval_episodes: usize,
    pub mode: Mode,
    pub feedback: FeedbackKind,
    /// Feature names for highlights; defaults to every feature of the environment.
    pub features: Option<Vec<String>>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 500_000,
            queries: 200,
            initial_fraction: 0.1,
            update_fraction: 0.1,
            reward_update_interval: Some(20_000),
            eval_interval: 20_000,
            segment_len: 50,
            segments_per_query: 2,
            eval_episodes: 10,
            mode: Mode::Predilect,
            feedback: FeedbackKind::Oracle,
            features: None,
        }
    }
}

impl LoopConfig {
    /// Queries labeled before any policy training.
    pub fn initial_queries(&self) -> usize {
        if self.reward_update_interval.is_none() {
            return self.queries;
        }
        ((self.queries as f64 * self.initial_fraction).ceil() as usize).min(self.queries)
    }

    /// Queries per reward update.
    pub fn update_queries(&self) -> usize {
        ((self.queries as f64 * self.update_fraction).ceil() as usize).max(1)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let fractions = (0.0..=1.0).contains(&self.initial_fraction) && (0.0..=1.0).contains(&self.update_fraction);
        if !fractions {
            return Err(OrchestratorError::Config("query fractions must lie in [0, 1]".into()));
        }
        if self.queries == 0 || self.initial_queries() == 0 {
            return Err(OrchestratorError::Config("at least one initial query is required".into()));
        }
        if self.segment_len < 2 || self.segments_per_query == 0 || self.eval_episodes == 0 || self.eval_interval == 0 {
            return Err(OrchestratorError::Config("segment length, sampling and evaluation counts must be positive".into()));
        }
        if self.reward_update_interval == Some(0) {
            return Err(OrchestratorError::Config("reward update interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub env: EnvConfig,
    #[serde(rename = "loop")]
    pub schedule: LoopConfig,
    pub ppo: PpoConfig,
    pub reward: RewardTrainConfig,
    pub oracle: OracleConfig,
    pub llm: LlmProviderConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset(EnvKind::PointReach, Preset::Full)
    }
}

/// Named budgets: `Full` follows the reference schedule, `Desk` fits a
/// single-core machine in about a minute per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Full,
    Desk,
}

impl Preset {
    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "full" => Some(Preset::Full),
            "desk" => Some(Preset::Desk),
            _ => None,
        }
    }
}

impl ExperimentConfig {
    pub fn preset(kind: EnvKind, preset: Preset) -> Self {
        let mut cfg = Self {
            seed: 0,
            env: EnvConfig::default_for(kind),
            schedule: LoopConfig::default(),
            ppo: PpoConfig::default(),
            reward: RewardTrainConfig::default(),
            oracle: OracleConfig::default(),
            llm: LlmProviderConfig::default(),
        };
        if kind == EnvKind::SocialNav {
            cfg.schedule.reward_update_interval = None;
        }
        if preset == Preset::Desk {
            cfg.reward.hidden = vec![32, 32];
            cfg.reward.lr = 1e-3;
            cfg.reward.epochs_initial = 200;
            cfg.reward.epochs_update = 100;
            cfg.ppo.hidden = vec![64, 64];
            cfg.schedule.queries = 100;
            cfg.schedule.eval_interval = 5_000;
            match kind {
                EnvKind::PointReach => {
                    cfg.schedule.total_timesteps = 60_000;
                    cfg.schedule.reward_update_interval = Some(5_000);
                }
                EnvKind::SocialNav => cfg.schedule.total_timesteps = 40_000,
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        self.env.validate()?;
        self.schedule.validate()?;
        self.ppo.validate()?;
        self.reward.validate(self.schedule.segment_len)?;
        if !(0.0..=1.0).contains(&self.oracle.error_rate) {
            return Err(OrchestratorError::Config("oracle error rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_split() {
        let mut l = LoopConfig { queries: 100, ..Default::default() };
        assert_eq!((l.initial_queries(), l.update_queries()), (10, 10));
        l.queries = 15;
        assert_eq!((l.initial_queries(), l.update_queries()), (2, 2));
        l.reward_update_interval = None;
        assert_eq!(l.initial_queries(), 15);
    }

    #[test]
    fn modes_adjust_reward_config() {
        let r = RewardTrainConfig::default();
        let b = Mode::Baseline.apply(&r);
        assert_eq!((b.alpha_pos, b.alpha_neg, b.use_preference_loss), (0.0, 0.0, true));
        assert!(!Mode::HighlightsOnly.apply(&r).use_preference_loss);
        assert_eq!(Mode::Predilect.apply(&r), r);
        assert_eq!(Mode::parse("highlights-only"), Some(Mode::HighlightsOnly));
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in [EnvKind::PointReach, EnvKind::SocialNav] {
            for preset in [Preset::Full, Preset::Desk] {
                let cfg = ExperimentConfig::preset(kind, preset);
                cfg.validate().unwrap();
                let json = serde_json::to_string(&cfg).unwrap();
                assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
            }
        }
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 7, "loop": {"queries": 30}}"#).unwrap();
        assert_eq!((partial.seed, partial.schedule.queries), (7, 30));
    }
}

//! Simulated environments and the mapping from segments to feature metrics.
//!
//! Learners interact through [`Environment`], whose `step` returns only the
//! next observation and the done flag. The true reward of the last transition
//! is exposed separately via [`Environment::last_true_reward`] so oracle and
//! evaluation code can read it while training code has no reason to.

pub mod geometry;
pub mod pointreach;
pub mod socialnav;

use std::cell::Cell;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::StreamRng;
use crate::types::{
    ActionVector, FeatureDescriptor, Frame, MetricTensor, Sentiment, StateVector, TrajectorySegment,
    DISTANCE_TO_GOAL, DISTANCE_TO_HUMAN, SPEED,
};

pub use pointreach::{PointReach, PointReachConfig};
pub use socialnav::{SocialNav, SocialNavConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action has dimension {got}, expected {expected}")]
    ActionDim { expected: usize, got: usize },
    #[error("action contains a non-finite value")]
    NonFiniteAction,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {feature:?} is undefined at frame {frame}: no humans in the scene")]
    NoHumans { feature: String, frame: usize },
    #[error("invalid environment config: {0}")]
    Config(String),
}

pub(crate) fn check_action(action: &ActionVector, dim: usize) -> Result<[f64; 3], EnvError> {
    if action.dim() != dim {
        return Err(EnvError::ActionDim { expected: dim, got: action.dim() });
    }
    if action.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(EnvError::NonFiniteAction);
    }
    let mut out = [0.0; 3];
    for (o, v) in out.iter_mut().zip(action.as_slice()) {
        *o = v.clamp(-1.0, 1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: StateVector,
    pub done: bool,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Starts a new episode with randomness drawn from the environment's own stream.
    fn reset(&mut self) -> StateVector;
    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome, EnvError>;
    fn observation(&self) -> StateVector;
    /// Ground-truth snapshot of the current state.
    fn frame(&self) -> Frame;
    /// True environment reward of the most recent transition.
    fn last_true_reward(&self) -> f64;
    /// Current social-force gain, for environments that have one.
    fn gain(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    PointReach,
    SocialNav,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointReach => "pointreach",
            EnvKind::SocialNav => "socialnav",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "pointreach" => Some(EnvKind::PointReach),
            "socialnav" => Some(EnvKind::SocialNav),
            _ => None,
        }
    }

    /// Features the mapping can compute for this environment, in default order.
    pub fn default_features(self) -> Vec<FeatureDescriptor> {
        match self {
            EnvKind::PointReach => vec![FeatureDescriptor::new(DISTANCE_TO_GOAL, "m")],
            EnvKind::SocialNav => vec![
                FeatureDescriptor::new(DISTANCE_TO_GOAL, "m"),
                FeatureDescriptor::new(DISTANCE_TO_HUMAN, "m"),
                FeatureDescriptor::new(SPEED, "m/s"),
            ],
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    PointReach(PointReachConfig),
    SocialNav(SocialNavConfig),
}

impl EnvConfig {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::PointReach => EnvConfig::PointReach(PointReachConfig::default()),
            EnvKind::SocialNav => EnvConfig::SocialNav(SocialNavConfig::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::PointReach(_) => EnvKind::PointReach,
            EnvConfig::SocialNav(_) => EnvKind::SocialNav,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::PointReach(c) => c.validate(),
            EnvConfig::SocialNav(c) => c.validate(),
        }
    }

    pub fn build(&self, rng: StreamRng) -> Result<Box<dyn Environment>, EnvError> {
        Ok(match self {
            EnvConfig::PointReach(c) => Box::new(PointReach::new(c.clone(), rng)?),
            EnvConfig::SocialNav(c) => Box::new(SocialNav::new(c.clone(), rng)?),
        })
    }

    /// Polarity of feature extremes under this environment's true reward.
    pub fn polarity(&self) -> PolarityTable {
        let speed_high_positive = match self {
            EnvConfig::PointReach(_) => true,
            EnvConfig::SocialNav(c) => c.speed_high_positive,
        };
        PolarityTable::standard(speed_high_positive)
    }

    pub fn episode_len(&self) -> usize {
        match self {
            EnvConfig::PointReach(c) => c.episode_len,
            EnvConfig::SocialNav(c) => c.episode_len,
        }
    }
}

/// Sentiments attached to the low and high extremes of one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polarity {
    pub low: Sentiment,
    pub high: Sentiment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarityTable {
    pub entries: Vec<(String, Polarity)>,
}

impl PolarityTable {
    /// Close to the goal is good, close to a human is bad; speed follows the flag.
    pub fn standard(speed_high_positive: bool) -> Self {
        use Sentiment::{Negative, Positive};
        let speed = if speed_high_positive {
            Polarity { low: Negative, high: Positive }
        } else {
            Polarity { low: Positive, high: Negative }
        };
        Self {
            entries: vec![
                (DISTANCE_TO_GOAL.into(), Polarity { low: Positive, high: Negative }),
                (DISTANCE_TO_HUMAN.into(), Polarity { low: Negative, high: Positive }),
                (SPEED.into(), speed),
            ],
        }
    }

    pub fn get(&self, feature: &str) -> Option<Polarity> {
        self.entries.iter().find(|(name, _)| name == feature).map(|(_, p)| *p)
    }
}

fn frame_metric(frame: &Frame, feature: &str, index: usize) -> Result<f64, EnvError> {
    match feature {
        DISTANCE_TO_GOAL => Ok(frame.distance_to_goal()),
        DISTANCE_TO_HUMAN => {
            frame.distance_to_human().ok_or_else(|| EnvError::NoHumans { feature: feature.into(), frame: index })
        }
        SPEED => Ok(frame.speed()),
        other => Err(EnvError::UnknownFeature(other.into())),
    }
}

/// Metric tensor of a segment computed from its ground-truth frames:
/// `rows[i][j]` is feature `j` at step `i`.
pub fn map_segment_to_metrics(
    segment: &TrajectorySegment,
    features: &[FeatureDescriptor],
) -> Result<MetricTensor, EnvError> {
    let rows = segment
        .frames
        .iter()
        .enumerate()
        .map(|(i, frame)| features.iter().map(|f| frame_metric(frame, &f.name, i)).collect())
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    Ok(MetricTensor { rows, feature_order: features.iter().map(|f| f.name.clone()).collect() })
}

/// Wrapper that counts reads of the true reward.
pub struct CountingEnv<E: Environment> {
    inner: E,
    reads: Cell<usize>,
}

impl<E: Environment> CountingEnv<E> {
    pub fn new(inner: E) -> Self {
        Self { inner, reads: Cell::new(0) }
    }

    pub fn true_reward_reads(&self) -> usize {
        self.reads.get()
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Environment> Environment for CountingEnv<E> {
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn reset(&mut self) -> StateVector {
        self.inner.reset()
    }
    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome, EnvError> {
        self.inner.step(action)
    }
    fn observation(&self) -> StateVector {
        self.inner.observation()
    }
    fn frame(&self) -> Frame {
        self.inner.frame()
    }
    fn last_true_reward(&self) -> f64 {
        self.reads.set(self.reads.get() + 1);
        self.inner.last_true_reward()
    }
    fn gain(&self) -> Option<f64> {
        self.inner.gain()
    }
}

impl Environment for Box<dyn Environment> {
    fn obs_dim(&self) -> usize {
        (**self).obs_dim()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn reset(&mut self) -> StateVector {
        (**self).reset()
    }
    fn step(&mut self, action: &ActionVector) -> Result<StepOutcome, EnvError> {
        (**self).step(action)
    }
    fn observation(&self) -> StateVector {
        (**self).observation()
    }
    fn frame(&self) -> Frame {
        (**self).frame()
    }
    fn last_true_reward(&self) -> f64 {
        (**self).last_true_reward()
    }
    fn gain(&self) -> Option<f64> {
        (**self).gain()
    }
}

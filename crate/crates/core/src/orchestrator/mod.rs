//! Policy training against the learned reward, and the experiment loop
//! that interleaves it with labeling and reward fitting.

pub mod config;
pub mod eval;
pub mod log;
pub mod ppo;
pub mod run;
pub mod segments;
pub mod source;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::envs::EnvError;
use crate::feedback::FeedbackError;
use crate::nn::NnError;
use crate::reward::RewardError;
use crate::types::{SegmentId, TypeError};

pub use config::{ExperimentConfig, FeedbackKind, LoopConfig, Mode, PpoConfig, Preset};
pub use eval::{evaluate_policy, mean_stderr, EvalResult};
pub use log::{write_curves_csv, write_force_csv, ExperimentLog, LogEntry, RunMeta};
pub use ppo::{Policy, PpoTrainer};
pub use run::{run_experiment, Experiment, RunArtifacts, RunState};
pub use segments::{sample_segments, SampledSegment};
pub use source::{FeedbackSource, LabelRequest, OracleSource};

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no true return recorded for segment {0}")]
    UnknownSegment(SegmentId),
    #[error("the feedback source returned no labels")]
    NoLabels,
    #[error("feedback source failed: {0}")]
    Source(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

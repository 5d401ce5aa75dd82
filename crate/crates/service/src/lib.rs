//! Labeling service: people pick the better of two segments and may say
//! why, and the paused training loop collects the result.
//!
//! [`QueryBoard`] holds the queries and leases, [`HumanFeedback`] plugs the
//! board into the training loop, and [`router`] exposes it over HTTP.

pub mod board;
pub mod http;
pub mod human;

use thiserror::Error;

use prefrl_core::dataset::DatasetError;
use prefrl_core::feedback::FeedbackError;

pub use board::{Ack, Choice, Clock, LabelSubmission, ManualClock, PendingQuery, Phase, QueryBoard, QueryStatus, Status, SystemClock};
pub use http::{router, serve, serve_on, NextResponse};
pub use human::HumanFeedback;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown query {0}")]
    UnknownQuery(u64),
    #[error("query {0} is not leased to this labeler")]
    NotLeased(u64),
    #[error("the lease on query {0} has expired")]
    LeaseExpired(u64),
    #[error("query {0} was already labeled by someone else")]
    AlreadyLabeled(u64),
    #[error("query {0} was withdrawn")]
    Withdrawn(u64),
    #[error("invalid submission: {0}")]
    Invalid(String),
    #[error("no batch is open")]
    NoBatch,
    #[error("no labels arrived before the timeout")]
    TimedOut,
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("internal error: {0}")]
    Internal(String),
}

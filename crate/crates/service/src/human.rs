//! Feedback source backed by people labeling through the service.

use std::sync::Arc;
use std::time::Duration;

use prefrl_core::orchestrator::{FeedbackSource, LabelRequest, OrchestratorError};
use prefrl_core::rng::StreamRng;
use prefrl_core::types::SentimentHighlightedQuery;

use crate::board::QueryBoard;

/// Publishes each labeling phase on the board and blocks until it is done.
pub struct HumanFeedback {
    board: Arc<QueryBoard>,
    timeout: Option<Duration>,
}

impl HumanFeedback {
    /// With a timeout, a phase returns whatever was labeled when it runs
    /// out, and fails if nothing was.
    pub fn new(board: Arc<QueryBoard>, timeout: Option<Duration>) -> Self {
        Self { board, timeout }
    }
}

impl FeedbackSource for HumanFeedback {
    fn label(&mut self, request: LabelRequest<'_>, _rng: &mut StreamRng) -> Result<Vec<SentimentHighlightedQuery>, OrchestratorError> {
        self.board.open_batch(request.pairs, request.features.to_vec(), request.want_highlights, request.highlight_len);
        self.board.wait_batch(self.timeout).map_err(|e| OrchestratorError::Source(e.to_string()))
    }

    fn llm_fallbacks(&self) -> usize {
        self.board.llm_fallbacks()
    }
}

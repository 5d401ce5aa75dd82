//! Turning segment pairs into labeled queries.
//!
//! A label is a preference plus, optionally, a free-text explanation. The
//! text goes through [`prompt::build_prompt`], an [`llm::LlmProvider`] and
//! [`parse::parse_llm_response`] to become sentiment triplets, which
//! [`search::search_highlights`] then localises inside the preferred segment.
//! The synthetic [`oracle`] can stand in for the human at either end.

pub mod llm;
pub mod oracle;
pub mod parse;
pub mod prompt;
pub mod sampling;
pub mod search;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{map_segment_to_metrics, EnvError};
use crate::types::{FeatureDescriptor, PreferenceLabel, SentimentHighlightedQuery, SentimentTriplet, TrajectorySegment};

pub use llm::{build_provider, query_llm, LlmError, LlmProvider, LlmProviderConfig, LlmReply, MockLlm, ProviderKind, RemoteLlm};
pub use oracle::{oracle_preference, oracle_response, thresholds_from_segments, triplets_to_text, OracleConfig};
pub use parse::parse_llm_response;
pub use prompt::{build_prompt, PromptTemplate, SOCIALNAV_TASK};
pub use sampling::sample_query_pairs;
pub use search::search_highlights;

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error("need at least 2 segments to form a query, have {0}")]
    InsufficientSegments(usize),
    #[error("feature {0:?} has no oracle threshold")]
    MissingThreshold(String),
    #[error("metric tensor has no column for feature {0:?}")]
    MissingColumn(String),
    #[error("segment of {rows} rows is too short for highlights of length {len}")]
    SegmentTooShort { rows: usize, len: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// Parsed LLM (or oracle) output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub triplets: Vec<SentimentTriplet>,
    pub raw_text: String,
}

impl LlmResponse {
    /// Renders triplets in the bracketed line format the prompt asks for.
    pub fn format_triplets(triplets: &[SentimentTriplet]) -> String {
        triplets
            .iter()
            .map(|t| format!("[feature: {}, sentiment: {}, value: {}]", t.feature, t.sentiment, t.value))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn from_triplets(triplets: Vec<SentimentTriplet>) -> Self {
        let raw_text = Self::format_triplets(&triplets);
        Self { triplets, raw_text }
    }
}

/// Builds the labeled query. Highlights are searched for only in the
/// preferred segment and only under a strict preference; ties and missing
/// responses yield a plain preference triple.
pub fn assemble_shq(
    segment_a: TrajectorySegment,
    segment_b: TrajectorySegment,
    w: PreferenceLabel,
    raw_prompt: Option<String>,
    response: Option<&LlmResponse>,
    features: &[FeatureDescriptor],
    highlight_len: usize,
) -> Result<SentimentHighlightedQuery, FeedbackError> {
    let mut shq = SentimentHighlightedQuery::preference_only(segment_a, segment_b, w);
    shq.raw_prompt = raw_prompt;
    shq.raw_response = response.map(|r| r.raw_text.clone());
    if let (Some(response), Some(preferred)) = (response, shq.preferred()) {
        if !response.triplets.is_empty() {
            let metrics = map_segment_to_metrics(preferred, features)?;
            let (pos, neg) = search_highlights(&metrics, response, highlight_len, &preferred.segment_id)?;
            shq.positives = pos;
            shq.negatives = neg;
        }
    }
    Ok(shq)
}

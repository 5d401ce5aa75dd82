//! Label producers for the training loop.

use std::collections::HashMap;

use super::config::{ExperimentConfig, FeedbackKind};
use super::OrchestratorError;
use crate::envs::{map_segment_to_metrics, EnvKind, PolarityTable};
use crate::feedback::{
    assemble_shq, build_provider, oracle_preference, oracle_response, parse_llm_response, thresholds_from_segments,
    triplets_to_text, LlmProvider, LlmResponse, OracleConfig, PromptTemplate,
};
use crate::rng::StreamRng;
use crate::types::{FeatureDescriptor, SegmentId, SentimentHighlightedQuery, TrajectorySegment};

/// One batch of pairs to label.
#[derive(Debug, Clone)]
pub struct LabelRequest<'a> {
    pub pairs: Vec<(TrajectorySegment, TrajectorySegment)>,
    /// False in baseline mode: only preferences are wanted.
    pub want_highlights: bool,
    pub features: &'a [FeatureDescriptor],
    pub highlight_len: usize,
}

pub trait FeedbackSource {
    /// Whether the loop should record true segment returns for this source.
    fn needs_true_returns(&self) -> bool {
        false
    }

    /// Sees the first batch of segments before any labels are requested and
    /// returns the features to use from then on.
    fn prepare(
        &mut self,
        _segments: &[TrajectorySegment],
        features: &[FeatureDescriptor],
    ) -> Result<Vec<FeatureDescriptor>, OrchestratorError> {
        Ok(features.to_vec())
    }

    /// Called with true returns of newly sampled segments when
    /// [`FeedbackSource::needs_true_returns`] is set.
    fn record_true_returns(&mut self, _returns: &[(SegmentId, f64)]) {}

    /// Labels the pairs. A source may return fewer labels than requested.
    fn label(&mut self, request: LabelRequest<'_>, rng: &mut StreamRng) -> Result<Vec<SentimentHighlightedQuery>, OrchestratorError>;

    /// Queries that lost their explanation because the LLM call failed.
    fn llm_fallbacks(&self) -> usize {
        0
    }
}

/// Synthetic labeler. Preferences come from true returns with flips;
/// explanations come from thresholded metrics, optionally rendered as text
/// and routed through an LLM.
pub struct OracleSource {
    config: OracleConfig,
    polarity: PolarityTable,
    returns: HashMap<SegmentId, f64>,
    llm: Option<(Box<dyn LlmProvider>, PromptTemplate)>,
    fallbacks: usize,
}

impl OracleSource {
    pub fn new(config: OracleConfig, polarity: PolarityTable) -> Self {
        Self { config, polarity, returns: HashMap::new(), llm: None, fallbacks: 0 }
    }

    /// The synthetic source a config asks for: oracle triplets used directly,
    /// or routed through the configured LLM provider.
    pub fn from_config(config: &ExperimentConfig) -> Result<Self, OrchestratorError> {
        let base = Self::new(config.oracle.clone(), config.env.polarity());
        match config.schedule.feedback {
            FeedbackKind::Oracle => Ok(base),
            FeedbackKind::Llm => {
                let provider = build_provider(&config.llm).map_err(|e| OrchestratorError::Source(e.to_string()))?;
                let template = match config.env.kind() {
                    EnvKind::PointReach => PromptTemplate::pointreach(),
                    EnvKind::SocialNav => PromptTemplate::default(),
                };
                Ok(base.with_llm(provider, template))
            }
            FeedbackKind::Human => Err(OrchestratorError::Config("human feedback is served by the labeling service".into())),
        }
    }

    pub fn with_llm(mut self, provider: Box<dyn LlmProvider>, template: PromptTemplate) -> Self {
        self.llm = Some((provider, template));
        self
    }

    fn explain(
        &mut self,
        preferred: &TrajectorySegment,
        features: &[FeatureDescriptor],
    ) -> Result<(Option<String>, Option<LlmResponse>), OrchestratorError> {
        let metrics = map_segment_to_metrics(preferred, features)?;
        let oracle = oracle_response(&metrics, features, &self.polarity)?;
        let Some((provider, template)) = &self.llm else {
            return Ok((None, Some(oracle)));
        };
        let text = triplets_to_text(&oracle.triplets);
        if text.is_empty() {
            return Ok((None, None));
        }
        let names: Vec<&str> = features.iter().map(|f| f.name.as_str()).collect();
        let prompt = template.build(&text, &names);
        match provider.complete(&prompt) {
            Ok(reply) => {
                let parsed = parse_llm_response(&reply.text, &names);
                Ok((Some(prompt), Some(parsed)))
            }
            Err(e) => {
                tracing::warn!(error = %e, "LLM unavailable, keeping preference only");
                self.fallbacks += 1;
                Ok((Some(prompt), None))
            }
        }
    }
}

impl FeedbackSource for OracleSource {
    fn needs_true_returns(&self) -> bool {
        true
    }

    fn prepare(
        &mut self,
        segments: &[TrajectorySegment],
        features: &[FeatureDescriptor],
    ) -> Result<Vec<FeatureDescriptor>, OrchestratorError> {
        let out = thresholds_from_segments(segments, features, self.config.threshold_quantiles)?;
        for f in &out {
            tracing::info!(feature = %f.name, threshold = ?f.oracle_threshold, "oracle threshold");
        }
        Ok(out)
    }

    fn record_true_returns(&mut self, returns: &[(SegmentId, f64)]) {
        self.returns.extend(returns.iter().cloned());
    }

    fn label(&mut self, request: LabelRequest<'_>, rng: &mut StreamRng) -> Result<Vec<SentimentHighlightedQuery>, OrchestratorError> {
        let mut out = Vec::with_capacity(request.pairs.len());
        for (a, b) in request.pairs {
            let ret = |s: &TrajectorySegment| {
                self.returns.get(&s.segment_id).copied().ok_or_else(|| OrchestratorError::UnknownSegment(s.segment_id.clone()))
            };
            let w = oracle_preference(ret(&a)?, ret(&b)?, &self.config, rng);
            let (prompt, response) = match (request.want_highlights, w.value()) {
                (true, v) if v == 0.0 => self.explain(&a, request.features)?,
                (true, v) if v == 1.0 => self.explain(&b, request.features)?,
                _ => (None, None),
            };
            out.push(assemble_shq(a, b, w, prompt, response.as_ref(), request.features, request.highlight_len)?);
        }
        Ok(out)
    }

    fn llm_fallbacks(&self) -> usize {
        self.fallbacks
    }
}

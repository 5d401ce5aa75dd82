//! Synthetic labeler: compares true returns (with a flip probability) and
//! flags features whose values cross fixed thresholds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FeedbackError, LlmResponse};
use crate::envs::{map_segment_to_metrics, PolarityTable};
use crate::types::{
    FeatureDescriptor, Magnitude, MetricTensor, PreferenceLabel, Sentiment, SentimentTriplet, TrajectorySegment,
    DISTANCE_TO_GOAL, DISTANCE_TO_HUMAN, SPEED,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub error_rate: f64,
    /// Returns closer than this count as equal.
    pub tie_tolerance: f64,
    /// Quantiles of initial-rollout metrics used as (low, high) thresholds
    /// for features without an explicit threshold.
    pub threshold_quantiles: (f64, f64),
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { error_rate: 0.10, tie_tolerance: 1e-6, threshold_quantiles: (0.10, 0.90) }
    }
}

/// `First` if `r0` wins by more than the tolerance, `Second` if `r1` does,
/// otherwise `Equal`. A strict preference is flipped with probability
/// `error_rate`; one uniform draw is consumed per call either way.
pub fn oracle_preference<R: Rng + ?Sized>(r0: f64, r1: f64, config: &OracleConfig, rng: &mut R) -> PreferenceLabel {
    let flip = rng.random::<f64>() < config.error_rate;
    let label = if r0 > r1 + config.tie_tolerance {
        PreferenceLabel::First
    } else if r1 > r0 + config.tie_tolerance {
        PreferenceLabel::Second
    } else {
        return PreferenceLabel::Equal;
    };
    if flip {
        label.flipped()
    } else {
        label
    }
}

/// Emits `(f, polarity.high, high)` when a column's maximum exceeds its high
/// threshold and `(f, polarity.low, low)` when its minimum falls below the low
/// threshold.
pub fn oracle_response(
    metrics: &MetricTensor,
    features: &[FeatureDescriptor],
    polarity: &PolarityTable,
) -> Result<LlmResponse, FeedbackError> {
    let mut triplets = Vec::new();
    for f in features {
        let (low, high) = f.oracle_threshold.ok_or_else(|| FeedbackError::MissingThreshold(f.name.clone()))?;
        let pol = polarity.get(&f.name).ok_or_else(|| FeedbackError::MissingThreshold(f.name.clone()))?;
        let column = metrics.column(&f.name).ok_or_else(|| FeedbackError::MissingColumn(f.name.clone()))?;
        let max = column.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = column.iter().copied().fold(f64::INFINITY, f64::min);
        if max > high {
            triplets.push(SentimentTriplet::new(&f.name, pol.high, Magnitude::High));
        }
        if min < low {
            triplets.push(SentimentTriplet::new(&f.name, pol.low, Magnitude::Low));
        }
    }
    Ok(LlmResponse::from_triplets(triplets))
}

/// Linear-interpolation quantile of sorted data (`q` in [0, 1]).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Copies of `features` with thresholds filled from the metric quantiles
/// over every frame of `segments`. Existing thresholds are kept.
pub fn thresholds_from_segments(
    segments: &[TrajectorySegment],
    features: &[FeatureDescriptor],
    quantiles: (f64, f64),
) -> Result<Vec<FeatureDescriptor>, FeedbackError> {
    if segments.is_empty() {
        return Err(FeedbackError::InsufficientSegments(0));
    }
    let tensors = segments.iter().map(|s| map_segment_to_metrics(s, features)).collect::<Result<Vec<_>, _>>()?;
    Ok(features
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let mut out = f.clone();
            if out.oracle_threshold.is_none() {
                let mut values: Vec<f64> = tensors.iter().flat_map(|t| t.rows.iter().map(move |r| r[j])).collect();
                values.sort_by(f64::total_cmp);
                out.oracle_threshold = Some((quantile(&values, quantiles.0), quantile(&values, quantiles.1)));
            }
            out
        })
        .collect())
}

fn phrase(feature: &str, value: Magnitude) -> Option<&'static str> {
    Some(match (feature, value) {
        (DISTANCE_TO_GOAL, Magnitude::High) => "stayed farther from the goal",
        (DISTANCE_TO_GOAL, Magnitude::Low) => "got closer to the goal",
        (DISTANCE_TO_HUMAN, Magnitude::High) => "stayed farther from the humans",
        (DISTANCE_TO_HUMAN, Magnitude::Low) => "came closer to the humans",
        (SPEED, Magnitude::High) => "moved at a faster pace",
        (SPEED, Magnitude::Low) => "moved at a slower pace",
        _ => return None,
    })
}

/// Plain-language explanation of a set of triplets, as a labeler might
/// write it. Triplets for features without a phrase are skipped.
pub fn triplets_to_text(triplets: &[SentimentTriplet]) -> String {
    let clauses: Vec<String> = triplets
        .iter()
        .filter_map(|t| {
            let p = phrase(&t.feature, t.value)?;
            Some(match t.sentiment {
                Sentiment::Positive => format!("it {p}"),
                Sentiment::Negative => format!("it was bad that it {p}"),
            })
        })
        .collect();
    if clauses.is_empty() {
        String::new()
    } else {
        clauses.join(", and ") + "."
    }
}

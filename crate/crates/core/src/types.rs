//! Domain types shared across the crate.
//!
//! Everything here is a plain value object: cheap to clone, `Send + Sync`, and
//! serialized with field names that match the on-disk JSON Lines schema.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Feature name for Euclidean robot-to-goal distance (meters).
pub const DISTANCE_TO_GOAL: &str = "distance to goal";
/// Feature name for distance to the nearest human (meters).
pub const DISTANCE_TO_HUMAN: &str = "distance to human";
/// Feature name for robot speed (m/s).
pub const SPEED: &str = "speed";

#[derive(Debug, Error, PartialEq)]
pub enum TypeError {
    #[error("segment has {pairs} state-action pairs but {frames} frames")]
    FrameCountMismatch { pairs: usize, frames: usize },
    #[error("segment is empty")]
    EmptySegment,
    #[error("state {index} has dimension {got}, expected {expected}")]
    StateDim { index: usize, expected: usize, got: usize },
    #[error("state {index} contains a non-finite value")]
    NonFiniteState { index: usize },
    #[error("action {index} is outside [-1, 1] or non-finite")]
    ActionOutOfRange { index: usize },
    #[error("invalid preference value {0}; expected 0, 0.5 or 1")]
    InvalidPreference(f64),
    #[error("highlight [{start}, {end}] invalid for segment of length {len} and highlight length {highlight_len}")]
    HighlightBounds { start: usize, end: usize, len: usize, highlight_len: usize },
    #[error("highlight references segment {found}, expected preferred segment {expected}")]
    HighlightSegment { expected: String, found: String },
    #[error("query with equal preference must not carry highlights")]
    HighlightsOnTie,
    #[error("duplicate highlight for feature '{feature}' with {sentiment} sentiment")]
    DuplicateHighlight { feature: String, sentiment: Sentiment },
    #[error("highlight for '{feature}' is filed under the wrong sentiment set")]
    HighlightSentiment { feature: String },
    #[error("metric tensor has {rows} rows but {expected} were expected")]
    MetricRows { rows: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Continuous action with every entry in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionVector(pub Vec<f64>);

impl ActionVector {
    /// Builds an action, clamping each entry to `[-1, 1]`.
    ///
    /// Non-finite entries are kept as-is so that environments can reject them.
    pub fn clamped(values: Vec<f64>) -> Self {
        Self(
            values
                .into_iter()
                .map(|v| if v.is_finite() { v.clamp(-1.0, 1.0) } else { v })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        self.0.iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateActionPair {
    pub state: StateVector,
    pub action: ActionVector,
}

/// Where a segment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    /// Index of the episode the segment started in.
    pub episode: u64,
    /// Step within that episode at which the segment starts.
    pub start_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub heading: f64,
    pub gain: f64,
}

/// Ground-truth scene snapshot for one step, used for metric computation and
/// UI playback. Serialized as `{t, robot, humans, goal, lidar}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: u64,
    pub robot: RobotPose,
    pub humans: Vec<Point>,
    pub goal: Point,
    pub lidar: Vec<f64>,
}

impl Frame {
    pub fn distance_to_goal(&self) -> f64 {
        (self.robot.x - self.goal.x).hypot(self.robot.y - self.goal.y)
    }

    /// Distance to the nearest human, or `None` when the scene has no humans.
    pub fn distance_to_human(&self) -> Option<f64> {
        self.humans
            .iter()
            .map(|h| (self.robot.x - h.x).hypot(self.robot.y - h.y))
            .min_by(f64::total_cmp)
    }

    pub fn speed(&self) -> f64 {
        self.robot.vx.hypot(self.robot.vy)
    }
}

/// Content-derived segment identifier (hex SHA-256 prefix).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SegmentId(pub String);

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A fixed-length run of state-action pairs, plus the parallel ground-truth
/// frame channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub segment_id: SegmentId,
    pub pairs: Vec<StateActionPair>,
    pub episode_meta: EpisodeMeta,
    pub frames: Vec<Frame>,
}

impl TrajectorySegment {
    pub fn new(
        pairs: Vec<StateActionPair>,
        episode_meta: EpisodeMeta,
        frames: Vec<Frame>,
    ) -> Result<Self, TypeError> {
        if pairs.is_empty() {
            return Err(TypeError::EmptySegment);
        }
        if pairs.len() != frames.len() {
            return Err(TypeError::FrameCountMismatch { pairs: pairs.len(), frames: frames.len() });
        }
        let dim = pairs[0].state.dim();
        for (index, pair) in pairs.iter().enumerate() {
            if pair.state.dim() != dim {
                return Err(TypeError::StateDim { index, expected: dim, got: pair.state.dim() });
            }
            if !pair.state.is_finite() {
                return Err(TypeError::NonFiniteState { index });
            }
            if !pair.action.is_valid() {
                return Err(TypeError::ActionOutOfRange { index });
            }
        }
        let segment_id = Self::content_id(&pairs, &episode_meta);
        Ok(Self { segment_id, pairs, episode_meta, frames })
    }

    /// SHA-256 over the canonical JSON of pairs and episode meta, truncated to
    /// 128 bits.
    pub fn content_id(pairs: &[StateActionPair], meta: &EpisodeMeta) -> SegmentId {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(pairs).expect("pairs serialize"));
        hasher.update(serde_json::to_vec(meta).expect("meta serializes"));
        let digest = hasher.finalize();
        SegmentId(hex::encode(&digest[..16]))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Preference between two segments: `w = 0` favors the first, `w = 1` the
/// second, `w = 0.5` is indifference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PreferenceLabel {
    First,
    Equal,
    Second,
}

impl PreferenceLabel {
    pub fn value(self) -> f64 {
        match self {
            PreferenceLabel::First => 0.0,
            PreferenceLabel::Equal => 0.5,
            PreferenceLabel::Second => 1.0,
        }
    }

    pub fn from_value(w: f64) -> Result<Self, TypeError> {
        if w == 0.0 {
            Ok(PreferenceLabel::First)
        } else if w == 0.5 {
            Ok(PreferenceLabel::Equal)
        } else if w == 1.0 {
            Ok(PreferenceLabel::Second)
        } else {
            Err(TypeError::InvalidPreference(w))
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            PreferenceLabel::First => PreferenceLabel::Second,
            PreferenceLabel::Second => PreferenceLabel::First,
            PreferenceLabel::Equal => PreferenceLabel::Equal,
        }
    }
}

impl Serialize for PreferenceLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for PreferenceLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let w = f64::deserialize(deserializer)?;
        PreferenceLabel::from_value(w).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    pub metric_units: String,
    /// Only consulted by the synthetic oracle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_threshold: Option<(f64, f64)>,
}

impl FeatureDescriptor {
    pub fn new(name: &str, metric_units: &str) -> Self {
        Self { name: name.to_string(), metric_units: metric_units.to_string(), oracle_threshold: None }
    }
}

/// Checks that feature names are non-empty and unique.
pub fn validate_feature_names<'a>(names: impl IntoIterator<Item = &'a str>) -> bool {
    let mut seen = HashSet::new();
    names.into_iter().all(|n| !n.trim().is_empty() && seen.insert(n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Positive,
    Negative,
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentiment::Positive => "positive",
            Sentiment::Negative => "negative",
        })
    }
}

/// Whether a feature's value was low or high.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Magnitude {
    Low,
    High,
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Magnitude::Low => "low",
            Magnitude::High => "high",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentimentTriplet {
    pub feature: String,
    pub sentiment: Sentiment,
    pub value: Magnitude,
}

impl SentimentTriplet {
    pub fn new(feature: &str, sentiment: Sentiment, value: Magnitude) -> Self {
        Self { feature: feature.to_string(), sentiment, value }
    }
}

/// A window `[start_index, end_index]` (inclusive) of a segment tied to one
/// feature. Holds `end_index - start_index + 1` state-action pairs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Highlight {
    pub segment_id: SegmentId,
    pub start_index: usize,
    pub end_index: usize,
    pub feature: String,
    pub sentiment: Sentiment,
}

impl Highlight {
    /// Highlight length `L` (`end - start`).
    pub fn length(&self) -> usize {
        self.end_index - self.start_index
    }

    pub fn validate(&self, segment_len: usize, highlight_len: usize) -> Result<(), TypeError> {
        let ok = self.start_index <= self.end_index
            && self.end_index < segment_len
            && self.end_index - self.start_index == highlight_len;
        if ok {
            Ok(())
        } else {
            Err(TypeError::HighlightBounds {
                start: self.start_index,
                end: self.end_index,
                len: segment_len,
                highlight_len,
            })
        }
    }
}

/// A labeled query: two segments, the preference, and the positive/negative
/// highlight sets extracted from the preferred segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentHighlightedQuery {
    pub segment_a: TrajectorySegment,
    pub segment_b: TrajectorySegment,
    pub w: PreferenceLabel,
    pub positives: Vec<Highlight>,
    pub negatives: Vec<Highlight>,
    pub raw_prompt: Option<String>,
    pub raw_response: Option<String>,
}

impl SentimentHighlightedQuery {
    /// Plain preference with no highlights.
    pub fn preference_only(a: TrajectorySegment, b: TrajectorySegment, w: PreferenceLabel) -> Self {
        Self {
            segment_a: a,
            segment_b: b,
            w,
            positives: Vec::new(),
            negatives: Vec::new(),
            raw_prompt: None,
            raw_response: None,
        }
    }

    /// The strictly preferred segment, if any.
    pub fn preferred(&self) -> Option<&TrajectorySegment> {
        match self.w {
            PreferenceLabel::First => Some(&self.segment_a),
            PreferenceLabel::Second => Some(&self.segment_b),
            PreferenceLabel::Equal => None,
        }
    }

    pub fn highlights(&self) -> impl Iterator<Item = &Highlight> {
        self.positives.iter().chain(self.negatives.iter())
    }

    pub fn validate(&self, highlight_len: usize) -> Result<(), TypeError> {
        let Some(preferred) = self.preferred() else {
            if self.positives.is_empty() && self.negatives.is_empty() {
                return Ok(());
            }
            return Err(TypeError::HighlightsOnTie);
        };
        let mut seen = HashSet::new();
        for h in self.highlights() {
            if h.segment_id != preferred.segment_id {
                return Err(TypeError::HighlightSegment {
                    expected: preferred.segment_id.0.clone(),
                    found: h.segment_id.0.clone(),
                });
            }
            h.validate(preferred.len(), highlight_len)?;
            if !seen.insert((h.feature.as_str(), h.sentiment)) {
                return Err(TypeError::DuplicateHighlight { feature: h.feature.clone(), sentiment: h.sentiment });
            }
        }
        let misfiled = self
            .positives
            .iter()
            .find(|h| h.sentiment != Sentiment::Positive)
            .or_else(|| self.negatives.iter().find(|h| h.sentiment != Sentiment::Negative));
        match misfiled {
            Some(h) => Err(TypeError::HighlightSentiment { feature: h.feature.clone() }),
            None => Ok(()),
        }
    }
}

/// Per-state, per-feature metric values of one segment. Row `i` is state `i`,
/// column `j` is `feature_order[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTensor {
    pub rows: Vec<Vec<f64>>,
    pub feature_order: Vec<String>,
}

impl MetricTensor {
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.feature_order.len()
    }

    pub fn column_index(&self, feature: &str) -> Option<usize> {
        self.feature_order.iter().position(|f| f == feature)
    }

    pub fn column(&self, feature: &str) -> Option<Vec<f64>> {
        let j = self.column_index(feature)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: u64) -> Frame {
        Frame {
            t,
            robot: RobotPose { x: 0.0, y: 0.0, vx: 3.0, vy: 4.0, heading: 0.0, gain: 0.0 },
            humans: vec![Point { x: 1.0, y: 0.0 }, Point { x: 0.0, y: -0.5 }],
            goal: Point { x: 3.0, y: 4.0 },
            lidar: vec![],
        }
    }

    fn pair(v: f64) -> StateActionPair {
        StateActionPair { state: StateVector(vec![v, 1.0]), action: ActionVector(vec![0.5]) }
    }

    #[test]
    fn preference_values_round_trip() {
        for w in [0.0, 0.5, 1.0] {
            let label = PreferenceLabel::from_value(w).unwrap();
            assert_eq!(label.value(), w);
            let json = serde_json::to_string(&label).unwrap();
            assert_eq!(serde_json::from_str::<PreferenceLabel>(&json).unwrap(), label);
        }
        assert!(PreferenceLabel::from_value(0.25).is_err());
        assert!(serde_json::from_str::<PreferenceLabel>("0.7").is_err());
    }

    #[test]
    fn frame_metrics() {
        let f = frame(0);
        assert_eq!(f.distance_to_goal(), 5.0);
        assert_eq!(f.distance_to_human(), Some(0.5));
        assert_eq!(f.speed(), 5.0);
    }

    #[test]
    fn segment_id_depends_on_content() {
        let meta = EpisodeMeta { episode: 1, start_step: 4 };
        let a = TrajectorySegment::new(vec![pair(0.0), pair(1.0)], meta, vec![frame(0), frame(1)]).unwrap();
        let b = TrajectorySegment::new(vec![pair(0.0), pair(1.0)], meta, vec![frame(0), frame(1)]).unwrap();
        let c = TrajectorySegment::new(vec![pair(0.0), pair(2.0)], meta, vec![frame(0), frame(1)]).unwrap();
        assert_eq!(a.segment_id, b.segment_id);
        assert_ne!(a.segment_id, c.segment_id);
        assert_eq!(a.segment_id.0.len(), 32);
    }

    #[test]
    fn segment_rejects_bad_input() {
        let meta = EpisodeMeta { episode: 0, start_step: 0 };
        assert_eq!(TrajectorySegment::new(vec![], meta, vec![]), Err(TypeError::EmptySegment));
        assert!(matches!(
            TrajectorySegment::new(vec![pair(0.0)], meta, vec![]),
            Err(TypeError::FrameCountMismatch { .. })
        ));
        let bad = StateActionPair { state: StateVector(vec![0.0]), action: ActionVector(vec![0.0]) };
        assert!(matches!(
            TrajectorySegment::new(vec![pair(0.0), bad], meta, vec![frame(0), frame(1)]),
            Err(TypeError::StateDim { index: 1, .. })
        ));
    }

    #[test]
    fn shq_validation() {
        let meta = EpisodeMeta { episode: 0, start_step: 0 };
        let pairs: Vec<_> = (0..5).map(|i| pair(i as f64)).collect();
        let frames: Vec<_> = (0..5).map(frame).collect();
        let a = TrajectorySegment::new(pairs.clone(), meta, frames.clone()).unwrap();
        let b = TrajectorySegment::new(pairs, EpisodeMeta { episode: 1, start_step: 0 }, frames).unwrap();
        let h = |seg: &TrajectorySegment, s: Sentiment| Highlight {
            segment_id: seg.segment_id.clone(),
            start_index: 1,
            end_index: 3,
            feature: SPEED.into(),
            sentiment: s,
        };
        let mut q = SentimentHighlightedQuery::preference_only(a.clone(), b.clone(), PreferenceLabel::First);
        q.positives.push(h(&a, Sentiment::Positive));
        assert!(q.validate(2).is_ok());
        assert!(q.validate(3).is_err());
        q.positives.push(h(&a, Sentiment::Positive));
        assert!(matches!(q.validate(2), Err(TypeError::DuplicateHighlight { .. })));
        q.positives.pop();
        q.w = PreferenceLabel::Second;
        assert!(matches!(q.validate(2), Err(TypeError::HighlightSegment { .. })));
        q.w = PreferenceLabel::Equal;
        assert_eq!(q.validate(2), Err(TypeError::HighlightsOnTie));
    }

    #[test]
    fn feature_name_validation() {
        assert!(validate_feature_names([DISTANCE_TO_GOAL, SPEED]));
        assert!(!validate_feature_names([SPEED, SPEED]));
        assert!(!validate_feature_names([" "]));
    }
}

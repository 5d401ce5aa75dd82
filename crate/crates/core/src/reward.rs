//! Learned reward `r(s, a)` and its preference/highlight objective.
//!
//! For a labeled pair with returns `R0`, `R1` (sums of `r` over each segment)
//! the preference probability is the two-way softmax of the returns. The
//! objective on a minibatch is
//!
//! ```text
//! total = ce + alpha_pos * pos + alpha_neg * neg
//! ce    = mean_q -[(1 - w) log P(σ0 ≻ σ1) + w log P(σ1 ≻ σ0)]
//! pos   = -mean_{h ∈ H+} G(h)
//! neg   = +mean_{h ∈ H-} G(h)
//! G(h)  = Σ_{l=0..L} λ^l r(s_{j-l}, a_{j-l})
//! ```
//!
//! so minimising it raises returns on positive highlights and lowers them on
//! negative ones. A regulariser whose weight is exactly zero is skipped
//! entirely (value and gradient), which keeps a zero-weight run bit-identical
//! to one that never saw highlights.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{adam_step, layer_stack, Activation, AdamConfig, AdamState, ForwardCache, Gradients, Mlp, NnError};
use crate::types::{Highlight, SentimentHighlightedQuery, TrajectorySegment};

/// Floor applied to probabilities before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;
/// Shrinks the initial output weights so a fresh model starts close to
/// indifferent between segments instead of saturated.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("empty batch")]
    EmptyBatch,
    #[error("segments of a pair differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("highlight {start}..={end} out of range for segment of length {len}")]
    HighlightRange { start: usize, end: usize, len: usize },
    #[error("highlight refers to segment {expected}, got {found}")]
    HighlightSegment { expected: String, found: String },
    #[error("highlight on a query without a strict preference")]
    HighlightOnTie,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid reward config: {0}")]
    Config(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardTrainConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs_initial: usize,
    pub epochs_update: usize,
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub lambda: f64,
    /// Highlight length `L`; a highlight spans `L + 1` pairs.
    pub highlight_len: usize,
    /// When false the cross-entropy term is reported but left out of `total`.
    pub use_preference_loss: bool,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            lr: 3e-4,
            batch_size: 128,
            epochs_initial: 200,
            epochs_update: 50,
            alpha_pos: 0.5,
            alpha_neg: 0.5,
            lambda: 0.9,
            highlight_len: 10,
            use_preference_loss: true,
        }
    }
}

impl RewardTrainConfig {
    pub fn validate(&self, segment_len: usize) -> Result<(), RewardError> {
        if !(self.alpha_pos >= 0.0 && self.alpha_neg >= 0.0) {
            return Err(RewardError::Config("alpha weights must be non-negative".into()));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(RewardError::Config("lambda must lie in (0, 1]".into()));
        }
        if self.highlight_len < 1 || self.highlight_len >= segment_len {
            return Err(RewardError::Config(format!(
                "highlight length {} must satisfy 1 <= L < {segment_len}",
                self.highlight_len
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || self.hidden.contains(&0) {
            return Err(RewardError::Config("batch size, learning rate and widths must be positive".into()));
        }
        Ok(())
    }
}

/// `r(s, a) = tanh(mlp([s, a]))` with relu hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub net: Mlp,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl RewardModel {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self, RewardError> {
        let specs = layer_stack(state_dim + action_dim, hidden, Activation::Relu, 1, Activation::Tanh);
        let mut net = Mlp::init(&specs, rng)?;
        if let Some(last) = net.layers_mut().last_mut() {
            last.weights.iter_mut().for_each(|w| *w *= OUTPUT_INIT_SCALE);
        }
        Ok(Self { net, state_dim, action_dim })
    }

    fn input(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>, RewardError> {
        if state.len() != self.state_dim || action.len() != self.action_dim {
            return Err(NnError::DimensionMismatch {
                layer: 0,
                expected: self.state_dim + self.action_dim,
                got: state.len() + action.len(),
            }
            .into());
        }
        let mut x = Vec::with_capacity(state.len() + action.len());
        x.extend_from_slice(state);
        x.extend_from_slice(action);
        Ok(x)
    }

    pub fn reward_of(&self, state: &[f64], action: &[f64]) -> Result<f64, RewardError> {
        Ok(self.net.predict(&self.input(state, action)?)?[0])
    }

    pub fn segment_rewards(&self, segment: &TrajectorySegment) -> Result<Vec<f64>, RewardError> {
        segment.pairs.iter().map(|p| self.reward_of(p.state.as_slice(), p.action.as_slice())).collect()
    }

    pub fn segment_return(&self, segment: &TrajectorySegment) -> Result<f64, RewardError> {
        Ok(self.segment_rewards(segment)?.iter().sum())
    }

    fn forward_segment(&self, segment: &TrajectorySegment) -> Result<Vec<ForwardCache>, RewardError> {
        segment
            .pairs
            .iter()
            .map(|p| Ok(self.net.forward(&self.input(p.state.as_slice(), p.action.as_slice())?)?))
            .collect()
    }
}

/// `exp(r0) / (exp(r0) + exp(r1))` evaluated with max subtraction.
pub fn preference_prob_from_returns(r0: f64, r1: f64) -> f64 {
    let m = r0.max(r1);
    let (e0, e1) = ((r0 - m).exp(), (r1 - m).exp());
    e0 / (e0 + e1)
}

/// `log P(σ0 ≻ σ1)` via log-sum-exp.
fn log_prob_first(r0: f64, r1: f64) -> f64 {
    let m = r0.max(r1);
    r0 - m - ((r0 - m).exp() + (r1 - m).exp()).ln()
}

/// Probability that `σ0` is preferred under `model`.
pub fn preference_prob(
    model: &RewardModel,
    sigma0: &TrajectorySegment,
    sigma1: &TrajectorySegment,
) -> Result<f64, RewardError> {
    if sigma0.len() != sigma1.len() {
        return Err(RewardError::LengthMismatch(sigma0.len(), sigma1.len()));
    }
    Ok(preference_prob_from_returns(model.segment_return(sigma0)?, model.segment_return(sigma1)?))
}

/// Cross-entropy of one label given the two returns, with `dL/dR0`.
/// `dL/dR1` is its negation.
fn ce_term(r0: f64, r1: f64, w: f64) -> (f64, f64) {
    let floor = LOG_CLAMP.ln();
    let lp0 = log_prob_first(r0, r1);
    let lp1 = log_prob_first(r1, r0);
    let p0 = preference_prob_from_returns(r0, r1);
    let mut loss = 0.0;
    let mut grad = 0.0;
    // d log p0 / dR0 = 1 - p0; d log p1 / dR0 = -p0.
    if 1.0 - w != 0.0 {
        if lp0 > floor {
            loss -= (1.0 - w) * lp0;
            grad -= (1.0 - w) * (1.0 - p0);
        } else {
            loss -= (1.0 - w) * floor;
        }
    }
    if w != 0.0 {
        if lp1 > floor {
            loss -= w * lp1;
            grad += w * p0;
        } else {
            loss -= w * floor;
        }
    }
    (loss, grad)
}

/// Mean preference cross-entropy over `(σ0, σ1, w)` triples.
pub fn loss_ce(
    model: &RewardModel,
    batch: &[(&TrajectorySegment, &TrajectorySegment, f64)],
) -> Result<f64, RewardError> {
    if batch.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let mut total = 0.0;
    for (s0, s1, w) in batch {
        if s0.len() != s1.len() {
            return Err(RewardError::LengthMismatch(s0.len(), s1.len()));
        }
        total += ce_term(model.segment_return(s0)?, model.segment_return(s1)?, *w).0;
    }
    Ok(total / batch.len() as f64)
}

fn check_highlight(h: &Highlight, segment: &TrajectorySegment) -> Result<(), RewardError> {
    if h.segment_id != segment.segment_id {
        return Err(RewardError::HighlightSegment {
            expected: segment.segment_id.to_string(),
            found: h.segment_id.to_string(),
        });
    }
    if h.start_index > h.end_index || h.end_index >= segment.len() {
        return Err(RewardError::HighlightRange { start: h.start_index, end: h.end_index, len: segment.len() });
    }
    Ok(())
}

/// Discounted return over a highlight, counted backwards from its last index.
pub fn highlight_return(
    model: &RewardModel,
    h: &Highlight,
    segment: &TrajectorySegment,
    lambda: f64,
) -> Result<f64, RewardError> {
    check_highlight(h, segment)?;
    let mut total = 0.0;
    let mut discount = 1.0;
    for k in (h.start_index..=h.end_index).rev() {
        let p = &segment.pairs[k];
        total += discount * model.reward_of(p.state.as_slice(), p.action.as_slice())?;
        discount *= lambda;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub pos: f64,
    pub neg: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        [self.ce, self.pos, self.neg, self.total].iter().all(|v| v.is_finite())
    }
}

/// Terms of the objective to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveWeights {
    pub alpha_pos: f64,
    pub alpha_neg: f64,
    pub lambda: f64,
    pub use_preference_loss: bool,
}

impl From<&RewardTrainConfig> for ObjectiveWeights {
    fn from(c: &RewardTrainConfig) -> Self {
        Self { alpha_pos: c.alpha_pos, alpha_neg: c.alpha_neg, lambda: c.lambda, use_preference_loss: c.use_preference_loss }
    }
}

struct Evaluated {
    rewards: Vec<f64>,
    caches: Option<Vec<ForwardCache>>,
    out_grads: Vec<f64>,
}

fn evaluate(model: &RewardModel, seg: &TrajectorySegment, with_grad: bool) -> Result<Evaluated, RewardError> {
    if with_grad {
        let caches = model.forward_segment(seg)?;
        let rewards = caches.iter().map(|c| c.output()[0]).collect();
        Ok(Evaluated { rewards, caches: Some(caches), out_grads: vec![0.0; seg.len()] })
    } else {
        Ok(Evaluated { rewards: model.segment_rewards(seg)?, caches: None, out_grads: vec![0.0; seg.len()] })
    }
}

fn objective(
    model: &RewardModel,
    batch: &[&SentimentHighlightedQuery],
    weights: &ObjectiveWeights,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Gradients>), RewardError> {
    if batch.is_empty() {
        return Err(RewardError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let use_pos = weights.alpha_pos != 0.0;
    let use_neg = weights.alpha_neg != 0.0;
    let n_pos = if use_pos { batch.iter().map(|q| q.positives.len()).sum::<usize>() } else { 0 };
    let n_neg = if use_neg { batch.iter().map(|q| q.negatives.len()).sum::<usize>() } else { 0 };
    let ce_scale = if weights.use_preference_loss { 1.0 / n } else { 0.0 };

    let mut out = LossBreakdown::default();
    let mut grads = with_grad.then(|| Gradients::zeros_like(&model.net));
    for q in batch {
        let (a, b) = (&q.segment_a, &q.segment_b);
        if a.len() != b.len() {
            return Err(RewardError::LengthMismatch(a.len(), b.len()));
        }
        let mut ea = evaluate(model, a, with_grad)?;
        let mut eb = evaluate(model, b, with_grad)?;
        let (ce, d_r0) = ce_term(ea.rewards.iter().sum(), eb.rewards.iter().sum(), q.w.value());
        out.ce += ce / n;
        if ce_scale != 0.0 {
            ea.out_grads.iter_mut().for_each(|g| *g += d_r0 * ce_scale);
            eb.out_grads.iter_mut().for_each(|g| *g -= d_r0 * ce_scale);
        }

        let highlighted = (use_pos && !q.positives.is_empty()) || (use_neg && !q.negatives.is_empty());
        if highlighted {
            let (seg, eval) = match q.w.value() {
                w if w == 0.0 => (a, &mut ea),
                w if w == 1.0 => (b, &mut eb),
                _ => return Err(RewardError::HighlightOnTie),
            };
            let groups = [(true, use_pos, &q.positives, n_pos), (false, use_neg, &q.negatives, n_neg)];
            for (positive, active, highlights, count) in groups {
                if !active {
                    continue;
                }
                let signed_alpha = if positive { -weights.alpha_pos } else { weights.alpha_neg };
                for h in highlights {
                    check_highlight(h, seg)?;
                    let scale = signed_alpha / count as f64;
                    let mut discount = 1.0;
                    let mut ret = 0.0;
                    for k in (h.start_index..=h.end_index).rev() {
                        ret += discount * eval.rewards[k];
                        eval.out_grads[k] += scale * discount;
                        discount *= weights.lambda;
                    }
                    if positive {
                        out.pos -= ret / count as f64;
                    } else {
                        out.neg += ret / count as f64;
                    }
                }
            }
        }

        if let Some(g) = grads.as_mut() {
            for e in [&ea, &eb] {
                let caches = e.caches.as_ref().expect("caches kept when differentiating");
                for (cache, &og) in caches.iter().zip(&e.out_grads) {
                    if og != 0.0 {
                        model.net.backward_into(cache, &[og], g)?;
                    }
                }
            }
        }
    }
    out.total = if weights.use_preference_loss { out.ce } else { 0.0 };
    if use_pos {
        out.total += weights.alpha_pos * out.pos;
    }
    if use_neg {
        out.total += weights.alpha_neg * out.neg;
    }
    Ok((out, grads))
}

/// Objective value and its gradient with respect to the model parameters.
pub fn loss_and_grad(
    model: &RewardModel,
    batch: &[&SentimentHighlightedQuery],
    weights: &ObjectiveWeights,
) -> Result<(LossBreakdown, Gradients), RewardError> {
    let (loss, grads) = objective(model, batch, weights, true)?;
    Ok((loss, grads.expect("gradient requested")))
}

pub fn loss_total(
    model: &RewardModel,
    batch: &[&SentimentHighlightedQuery],
    weights: &ObjectiveWeights,
) -> Result<LossBreakdown, RewardError> {
    Ok(objective(model, batch, weights, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainPhase {
    Initial,
    Update,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Reward model plus the optimizer state that persists across phases.
#[derive(Debug, Clone)]
pub struct RewardLearner {
    pub model: RewardModel,
    pub config: RewardTrainConfig,
    adam: AdamState,
}

impl RewardLearner {
    pub fn new(model: RewardModel, config: RewardTrainConfig) -> Self {
        let adam = AdamState::new(&model.net, AdamConfig::with_lr(config.lr));
        Self { model, config, adam }
    }

    /// Minibatch Adam over `dataset` for the phase's epoch count. Each epoch
    /// reshuffles with `rng`; the returned curve has one entry per epoch with
    /// the size-weighted mean minibatch loss.
    pub fn train<R: Rng + ?Sized>(
        &mut self,
        dataset: &[SentimentHighlightedQuery],
        phase: TrainPhase,
        rng: &mut R,
    ) -> Result<Vec<EpochLoss>, RewardError> {
        if dataset.is_empty() {
            return Err(RewardError::EmptyDataset);
        }
        let epochs = match phase {
            TrainPhase::Initial => self.config.epochs_initial,
            TrainPhase::Update => self.config.epochs_update,
        };
        let weights = ObjectiveWeights::from(&self.config);
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut curve = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(rng);
            let mut sum = LossBreakdown::default();
            for chunk in order.chunks(self.config.batch_size) {
                let batch: Vec<&SentimentHighlightedQuery> = chunk.iter().map(|&i| &dataset[i]).collect();
                let (loss, grads) = loss_and_grad(&self.model, &batch, &weights)?;
                if !loss.is_finite() {
                    return Err(RewardError::NonFiniteLoss { epoch });
                }
                adam_step(&mut self.model.net, &grads, &mut self.adam)?;
                let frac = chunk.len() as f64 / dataset.len() as f64;
                sum.ce += loss.ce * frac;
                sum.pos += loss.pos * frac;
                sum.neg += loss.neg * frac;
                sum.total += loss.total * frac;
            }
            curve.push(EpochLoss { epoch, loss: sum });
        }
        Ok(curve)
    }
}

/// Trains a fresh optimizer over `model` for one phase.
pub fn train_reward<R: Rng + ?Sized>(
    model: RewardModel,
    dataset: &[SentimentHighlightedQuery],
    config: &RewardTrainConfig,
    phase: TrainPhase,
    rng: &mut R,
) -> Result<(RewardModel, Vec<EpochLoss>), RewardError> {
    let mut learner = RewardLearner::new(model, config.clone());
    let curve = learner.train(dataset, phase, rng)?;
    Ok((learner.model, curve))
}

/// Writes `epoch,loss_ce,loss_pos,loss_neg,total` rows.
pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[EpochLoss]) -> Result<(), RewardError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,loss_ce,loss_pos,loss_neg,total")?;
    for e in curve {
        writeln!(out, "{},{},{},{},{}", e.epoch, e.loss.ce, e.loss.pos, e.loss.neg, e.loss.total)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::types::*;

    fn segment(rng: &mut impl Rng, len: usize, dim: usize, tag: u64) -> TrajectorySegment {
        let pairs: Vec<StateActionPair> = (0..len)
            .map(|_| StateActionPair {
                state: StateVector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()),
                action: ActionVector((0..2).map(|_| rng.random_range(-1.0..1.0)).collect()),
            })
            .collect();
        let frames = (0..len)
            .map(|t| Frame {
                t: t as u64,
                robot: RobotPose { x: 0.0, y: 0.0, vx: 0.0, vy: 0.0, heading: 0.0, gain: 0.0 },
                humans: vec![],
                goal: Point { x: 1.0, y: 0.0 },
                lidar: vec![],
            })
            .collect();
        TrajectorySegment::new(pairs, EpisodeMeta { episode: tag, start_step: 0 }, frames).unwrap()
    }

    fn model(seed: u64, dim: usize, hidden: &[usize]) -> RewardModel {
        RewardModel::new(dim, 2, hidden, &mut seeded_rng(seed, "reward")).unwrap()
    }

    fn highlight(seg: &TrajectorySegment, start: usize, len: usize, sentiment: Sentiment) -> Highlight {
        Highlight {
            segment_id: seg.segment_id.clone(),
            start_index: start,
            end_index: start + len,
            feature: SPEED.into(),
            sentiment,
        }
    }

    #[test]
    fn closed_form_probabilities() {
        assert_eq!(preference_prob_from_returns(3.0, 3.0), 0.5);
        let e2 = 2f64.exp();
        assert!((preference_prob_from_returns(2.0, 0.0) - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((preference_prob_from_returns(2.0, 0.0) - 0.880797).abs() < 1e-6);
        assert!(preference_prob_from_returns(800.0, -800.0) == 1.0);
    }

    #[test]
    fn ce_closed_forms() {
        assert!((ce_term(1.0, 1.0, 0.0).0 - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(ce_term(40.0, 0.0, 0.0).0 < 1e-15);
        for d in [-3.0, -0.5, 0.0, 0.7, 2.0] {
            let p = preference_prob_from_returns(d, 0.0);
            let loss = ce_term(d, 0.0, 0.5).0;
            assert!((loss - 0.5 * (-(p.ln()) - (1.0 - p).ln())).abs() < 1e-12);
            assert!(loss >= std::f64::consts::LN_2 - 1e-15);
        }
        // Extreme disagreement hits the clamp.
        assert!((ce_term(0.0, 1000.0, 0.0).0 + LOG_CLAMP.ln()).abs() < 1e-9);
    }

    #[test]
    fn reward_is_bounded_and_matches_network() {
        let m = model(1, 3, &[8, 8]);
        let mut rng = seeded_rng(2, "x");
        for _ in 0..200 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-8.0..8.0)).collect();
            let a = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let r = m.reward_of(&s, &a).unwrap();
            assert!(r > -1.0 && r < 1.0);
            let mut x = s.clone();
            x.extend(a);
            assert_eq!(r, m.net.forward(&x).unwrap().output()[0]);
        }
        assert!(m.reward_of(&[0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn probability_pairs_normalize() {
        let mut rng = seeded_rng(3, "segs");
        let m = model(3, 3, &[8]);
        for i in 0..50 {
            let a = segment(&mut rng, 20, 3, i);
            let b = segment(&mut rng, 20, 3, i + 1000);
            let s = preference_prob(&m, &a, &b).unwrap() + preference_prob(&m, &b, &a).unwrap();
            assert!((s - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_shift_leaves_probability_unchanged() {
        let mut rng = seeded_rng(4, "shift");
        for _ in 0..100 {
            let r0: f64 = (0..50).map(|_| rng.random_range(-1.0..1.0)).sum();
            let r1: f64 = (0..50).map(|_| rng.random_range(-1.0..1.0)).sum();
            let c = rng.random_range(-1.0..1.0) * 50.0;
            let shifted = preference_prob_from_returns(r0 + c, r1 + c);
            assert!((shifted - preference_prob_from_returns(r0, r1)).abs() < 1e-9);
        }
    }

    #[test]
    fn highlight_return_cases() {
        let mut rng = seeded_rng(5, "h");
        let seg = segment(&mut rng, 10, 3, 0);
        let m = model(5, 3, &[8]);
        let r = m.segment_rewards(&seg).unwrap();
        let h = highlight(&seg, 3, 2, Sentiment::Positive);
        let got = highlight_return(&m, &h, &seg, 0.5).unwrap();
        assert!((got - (r[5] + 0.5 * r[4] + 0.25 * r[3])).abs() < 1e-15);
        let plain = highlight_return(&m, &h, &seg, 1.0).unwrap();
        assert!((plain - (r[3] + r[4] + r[5])).abs() < 1e-15);
        let single = highlight(&seg, 7, 0, Sentiment::Positive);
        assert_eq!(highlight_return(&m, &single, &seg, 0.9).unwrap(), r[7]);
        let bad = highlight(&seg, 8, 2, Sentiment::Positive);
        assert!(matches!(highlight_return(&m, &bad, &seg, 0.9), Err(RewardError::HighlightRange { .. })));
    }

    #[test]
    fn discounted_sum_of_ones() {
        // With every reward equal to one the return is 1 + λ + λ².
        let total: f64 = (0..=2).map(|l| 0.5f64.powi(l)).sum();
        assert_eq!(total, 1.75);
    }

    fn shq_with(rng: &mut impl Rng, w: PreferenceLabel, pos: usize, neg: usize, tag: u64) -> SentimentHighlightedQuery {
        let a = segment(rng, 12, 3, tag);
        let b = segment(rng, 12, 3, tag + 500);
        let mut q = SentimentHighlightedQuery::preference_only(a, b, w);
        if let Some(pref) = q.preferred().cloned() {
            for k in 0..pos {
                q.positives.push(highlight(&pref, k, 3, Sentiment::Positive));
            }
            for k in 0..neg {
                q.negatives.push(highlight(&pref, 6 + k, 3, Sentiment::Negative));
            }
        }
        q
    }

    fn weights(alpha: f64, ce: bool) -> ObjectiveWeights {
        ObjectiveWeights { alpha_pos: alpha, alpha_neg: alpha, lambda: 0.9, use_preference_loss: ce }
    }

    fn fd_check(m: &RewardModel, batch: &[&SentimentHighlightedQuery], w: &ObjectiveWeights) {
        let (_, g) = loss_and_grad(m, batch, w).unwrap();
        let analytic = g.to_flat();
        let h = 1e-5;
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = m.clone();
            *plus.net.param_mut(i).unwrap() += h;
            let mut minus = m.clone();
            *minus.net.param_mut(i).unwrap() -= h;
            let num = (loss_total(&plus, batch, w).unwrap().total - loss_total(&minus, batch, w).unwrap().total) / (2.0 * h);
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            assert!(rel <= 1e-4, "param {i}: {a} vs {num}");
        }
    }

    #[test]
    fn objective_gradients_match_finite_differences() {
        let mut rng = seeded_rng(6, "fd");
        let m = model(6, 3, &[6, 5]);
        let qs = vec![
            shq_with(&mut rng, PreferenceLabel::First, 1, 1, 1),
            shq_with(&mut rng, PreferenceLabel::Second, 2, 0, 2),
            shq_with(&mut rng, PreferenceLabel::Equal, 0, 0, 3),
            shq_with(&mut rng, PreferenceLabel::Second, 0, 1, 4),
        ];
        let batch: Vec<&SentimentHighlightedQuery> = qs.iter().collect();
        fd_check(&m, &batch, &weights(0.5, true));
        fd_check(&m, &batch, &weights(0.5, false));
        fd_check(&m, &batch, &weights(0.0, true));
    }

    #[test]
    fn zero_alpha_reduces_to_cross_entropy() {
        let mut rng = seeded_rng(7, "reduce");
        let m = model(7, 3, &[8]);
        let with = [shq_with(&mut rng, PreferenceLabel::First, 2, 1, 1), shq_with(&mut rng, PreferenceLabel::Second, 1, 1, 2)];
        let without: Vec<_> = with
            .iter()
            .map(|q| SentimentHighlightedQuery::preference_only(q.segment_a.clone(), q.segment_b.clone(), q.w))
            .collect();
        let (l1, g1) = loss_and_grad(&m, &with.iter().collect::<Vec<_>>(), &weights(0.0, true)).unwrap();
        let (l2, g2) = loss_and_grad(&m, &without.iter().collect::<Vec<_>>(), &weights(0.0, true)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
        let ce = loss_ce(&m, &without.iter().map(|q| (&q.segment_a, &q.segment_b, q.w.value())).collect::<Vec<_>>()).unwrap();
        assert_eq!(l1.total.to_bits(), ce.to_bits());
    }

    fn step_along(m: &RewardModel, g: &Gradients, lr: f64) -> RewardModel {
        let mut next = m.clone();
        for (i, v) in g.to_flat().iter().enumerate() {
            *next.net.param_mut(i).unwrap() -= lr * v;
        }
        next
    }

    #[test]
    fn regularizer_steps_move_highlight_returns_the_right_way() {
        let mut rng = seeded_rng(8, "dir");
        let m = model(8, 3, &[8, 8]);
        let q = shq_with(&mut rng, PreferenceLabel::First, 1, 1, 9);
        let pos = ObjectiveWeights { alpha_pos: 1.0, alpha_neg: 0.0, lambda: 0.9, use_preference_loss: false };
        let neg = ObjectiveWeights { alpha_pos: 0.0, alpha_neg: 1.0, lambda: 0.9, use_preference_loss: false };
        let seg = &q.segment_a;
        let before_pos = highlight_return(&m, &q.positives[0], seg, 0.9).unwrap();
        let before_neg = highlight_return(&m, &q.negatives[0], seg, 0.9).unwrap();
        let (_, gp) = loss_and_grad(&m, &[&q], &pos).unwrap();
        let after = step_along(&m, &gp, 1e-4);
        assert!(highlight_return(&after, &q.positives[0], seg, 0.9).unwrap() > before_pos);
        let (_, gn) = loss_and_grad(&m, &[&q], &neg).unwrap();
        let after = step_along(&m, &gn, 1e-4);
        assert!(highlight_return(&after, &q.negatives[0], seg, 0.9).unwrap() < before_neg);
    }

    #[test]
    fn highlight_on_tie_is_rejected() {
        let mut rng = seeded_rng(9, "tie");
        let m = model(9, 3, &[4]);
        let mut q = shq_with(&mut rng, PreferenceLabel::First, 1, 0, 1);
        q.w = PreferenceLabel::Equal;
        assert!(matches!(loss_total(&m, &[&q], &weights(0.5, true)), Err(RewardError::HighlightOnTie)));
    }

    fn linear_dataset(rng: &mut impl Rng, n: usize) -> Vec<SentimentHighlightedQuery> {
        let true_reward = |p: &StateActionPair| p.state.0[0] - 0.5 * p.state.0[1];
        (0..n as u64)
            .map(|i| {
                let a = segment(rng, 10, 3, i);
                let b = segment(rng, 10, 3, i + 10_000);
                let ra: f64 = a.pairs.iter().map(true_reward).sum();
                let rb: f64 = b.pairs.iter().map(true_reward).sum();
                let w = if ra > rb { PreferenceLabel::First } else { PreferenceLabel::Second };
                SentimentHighlightedQuery::preference_only(a, b, w)
            })
            .collect()
    }

    #[test]
    fn fits_linearly_separable_preferences() {
        let mut rng = seeded_rng(10, "data");
        let data = linear_dataset(&mut rng, 50);
        let cfg = RewardTrainConfig { hidden: vec![32, 32], alpha_pos: 0.0, alpha_neg: 0.0, ..Default::default() };
        let (m, curve) = train_reward(model(10, 3, &[32, 32]), &data, &cfg, TrainPhase::Initial, &mut seeded_rng(10, "shuffle")).unwrap();
        assert_eq!(curve.len(), cfg.epochs_initial);
        assert!(curve.last().unwrap().loss.total < curve[0].loss.total);
        let correct = data
            .iter()
            .filter(|q| {
                let p = preference_prob(&m, &q.segment_a, &q.segment_b).unwrap();
                (p > 0.5) == (q.w == PreferenceLabel::First)
            })
            .count();
        assert!(correct as f64 >= 0.95 * data.len() as f64, "accuracy {correct}/50");
    }

    #[test]
    fn training_is_reproducible() {
        let mut rng = seeded_rng(11, "data");
        let data = linear_dataset(&mut rng, 20);
        let cfg = RewardTrainConfig { hidden: vec![8], epochs_update: 5, batch_size: 8, ..Default::default() };
        let run = || train_reward(model(11, 3, &[8]), &data, &cfg, TrainPhase::Update, &mut seeded_rng(11, "s")).unwrap();
        let (m1, c1) = run();
        let (m2, c2) = run();
        assert_eq!(m1, m2);
        assert_eq!(c1, c2);
        assert!(matches!(
            train_reward(model(11, 3, &[8]), &[], &cfg, TrainPhase::Update, &mut seeded_rng(0, "s")),
            Err(RewardError::EmptyDataset)
        ));
    }

    #[test]
    fn loss_curve_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = [EpochLoss { epoch: 0, loss: LossBreakdown { ce: 0.5, pos: -0.1, neg: 0.2, total: 0.55 } }];
        write_loss_curve(&path, &curve).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert_eq!(text, "epoch,loss_ce,loss_pos,loss_neg,total\n0,0.5,-0.1,0.2,0.55\n");
    }

    #[test]
    fn config_validation() {
        assert!(RewardTrainConfig::default().validate(50).is_ok());
        assert!(RewardTrainConfig { highlight_len: 50, ..Default::default() }.validate(50).is_err());
        assert!(RewardTrainConfig { lambda: 0.0, ..Default::default() }.validate(50).is_err());
        assert!(RewardTrainConfig { alpha_pos: -1.0, ..Default::default() }.validate(50).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn probabilities_are_complementary(r0 in -500.0..500.0f64, r1 in -500.0..500.0f64) {
                let p = preference_prob_from_returns(r0, r1);
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!((p + preference_prob_from_returns(r1, r0) - 1.0).abs() < 1e-12);
                prop_assert!(preference_prob_from_returns(r0 + 1.0, r1) >= p);
            }

            #[test]
            fn rewards_stay_bounded(seed in 0u64..50, x in proptest::collection::vec(-100.0..100.0f64, 5)) {
                let m = model(seed, 3, &[6]);
                let r = m.reward_of(&x[..3], &x[3..]).unwrap();
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}

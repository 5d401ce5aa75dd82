//! Leased query queue shared by the HTTP handlers and the paused training loop.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use prefrl_core::dataset::append_shq;
use prefrl_core::feedback::{assemble_shq, parse_llm_response, LlmProvider, PromptTemplate};
use prefrl_core::types::{FeatureDescriptor, Frame, PreferenceLabel, SentimentHighlightedQuery, TrajectorySegment};

use crate::ServiceError;

pub const LEASE: Duration = Duration::from_secs(600);
pub const MAX_PROMPT_CHARS: usize = 2000;

/// Milliseconds since the Unix epoch.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
    }
}

/// A clock that only moves when told to.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn advance(&self, by: Duration) {
        self.0.fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryStatus {
    Pending,
    Labeled,
    Skipped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
    None,
}

impl Choice {
    pub fn label(self) -> PreferenceLabel {
        match self {
            Choice::A => PreferenceLabel::First,
            Choice::B => PreferenceLabel::Second,
            Choice::None => PreferenceLabel::Equal,
        }
    }
}

/// What a labeler is shown: the frames of both segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub query_id: u64,
    pub segment_a: Vec<Frame>,
    pub segment_b: Vec<Frame>,
    pub created_at: u64,
    pub status: QueryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSubmission {
    /// Optional in the body; the path carries the id.
    #[serde(default)]
    pub query_id: Option<u64>,
    pub choice: Choice,
    #[serde(default)]
    pub prompt_text: String,
    pub labeler_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub query_id: u64,
    pub w: f64,
    pub positives: usize,
    pub negatives: usize,
    /// The explanation was dropped because the LLM call failed.
    pub llm_fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Idle,
    Labeling,
    Training,
    Finished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    /// Labels accepted over the whole run.
    pub labeled: usize,
    /// Unlabeled queries in the open batch.
    pub pending: usize,
    /// Size of the open batch.
    pub quota: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone)]
struct Lease {
    labeler: String,
    expires: u64,
}

struct Entry {
    a: TrajectorySegment,
    b: TrajectorySegment,
    created_at: u64,
    status: QueryStatus,
    lease: Option<Lease>,
    outcome: Option<(String, Ack)>,
}

struct Batch {
    ids: Vec<u64>,
    features: Vec<FeatureDescriptor>,
    want_highlights: bool,
    highlight_len: usize,
    results: BTreeMap<u64, SentimentHighlightedQuery>,
}

struct Inner {
    entries: BTreeMap<u64, Entry>,
    next_id: u64,
    batch: Option<Batch>,
    labeled: usize,
    phase: Phase,
    fallbacks: usize,
}

pub struct QueryBoard {
    inner: Mutex<Inner>,
    changed: Condvar,
    clock: Arc<dyn Clock>,
    provider: Arc<dyn LlmProvider>,
    template: PromptTemplate,
    dataset_dir: Option<PathBuf>,
    lease: Duration,
}

impl QueryBoard {
    pub fn new(provider: Arc<dyn LlmProvider>, template: PromptTemplate, clock: Arc<dyn Clock>) -> Self {
        Self {
            inner: Mutex::new(Inner {
                entries: BTreeMap::new(),
                next_id: 1,
                batch: None,
                labeled: 0,
                phase: Phase::Idle,
                fallbacks: 0,
            }),
            changed: Condvar::new(),
            clock,
            provider,
            template,
            dataset_dir: None,
            lease: LEASE,
        }
    }

    /// Appends every accepted label to `shq.jsonl` in `dir`.
    pub fn with_dataset_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dataset_dir = Some(dir.into());
        self
    }

    pub fn with_lease(mut self, lease: Duration) -> Self {
        self.lease = lease;
        self
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Publishes a batch of pairs for labeling and returns their ids.
    pub fn open_batch(
        &self,
        pairs: Vec<(TrajectorySegment, TrajectorySegment)>,
        features: Vec<FeatureDescriptor>,
        want_highlights: bool,
        highlight_len: usize,
    ) -> Vec<u64> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let mut ids = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let id = inner.next_id;
            inner.next_id += 1;
            inner.entries.insert(id, Entry { a, b, created_at: now, status: QueryStatus::Pending, lease: None, outcome: None });
            ids.push(id);
        }
        inner.batch = Some(Batch { ids: ids.clone(), features, want_highlights, highlight_len, results: BTreeMap::new() });
        inner.phase = Phase::Labeling;
        self.changed.notify_all();
        ids
    }

    /// Leases a pending query to `labeler`. A labeler holding a live lease
    /// gets the same query back.
    pub fn next_query(&self, labeler: &str) -> Option<PendingQuery> {
        let now = self.clock.now_ms();
        let mut inner = self.lock();
        let ids = inner.batch.as_ref()?.ids.clone();
        let live = |e: &Entry| e.lease.as_ref().is_some_and(|l| l.expires > now);
        let held = ids.iter().copied().find(|id| {
            let e = &inner.entries[id];
            e.status == QueryStatus::Pending && live(e) && e.lease.as_ref().is_some_and(|l| l.labeler == labeler)
        });
        let id = held.or_else(|| {
            ids.iter().copied().find(|id| {
                let e = &inner.entries[id];
                e.status == QueryStatus::Pending && !live(e)
            })
        })?;
        let expires = now + self.lease.as_millis() as u64;
        let entry = inner.entries.get_mut(&id).expect("batch ids are stored");
        entry.lease = Some(Lease { labeler: labeler.to_string(), expires });
        Some(PendingQuery {
            query_id: id,
            segment_a: entry.a.frames.clone(),
            segment_b: entry.b.frames.clone(),
            created_at: entry.created_at,
            status: entry.status,
        })
    }

    /// Accepts a label. Repeating a submission returns the earlier result.
    pub fn submit(&self, query_id: u64, submission: &LabelSubmission) -> Result<Ack, ServiceError> {
        if submission.query_id.is_some_and(|id| id != query_id) {
            return Err(ServiceError::Invalid("query id in body does not match the path".into()));
        }
        if submission.prompt_text.chars().count() > MAX_PROMPT_CHARS {
            return Err(ServiceError::Invalid(format!("prompt longer than {MAX_PROMPT_CHARS} characters")));
        }
        let labeler = submission.labeler_id.as_str();
        let (a, b, features, want_highlights, highlight_len) = {
            let inner = self.lock();
            let entry = inner.entries.get(&query_id).ok_or(ServiceError::UnknownQuery(query_id))?;
            if let Some(prior) = prior_result(entry, labeler, query_id)? {
                return Ok(prior);
            }
            if entry.status == QueryStatus::Skipped {
                return Err(ServiceError::Withdrawn(query_id));
            }
            match &entry.lease {
                Some(l) if l.labeler == labeler && l.expires > self.clock.now_ms() => {}
                Some(l) if l.labeler == labeler => return Err(ServiceError::LeaseExpired(query_id)),
                _ => return Err(ServiceError::NotLeased(query_id)),
            }
            let batch = inner.batch.as_ref().ok_or(ServiceError::Withdrawn(query_id))?;
            (entry.a.clone(), entry.b.clone(), batch.features.clone(), batch.want_highlights, batch.highlight_len)
        };

        // The LLM call runs without holding the lock.
        let w = submission.choice.label();
        let text = submission.prompt_text.trim();
        let mut fallback = false;
        let (raw_prompt, response) = if text.is_empty() {
            (None, None)
        } else if submission.choice == Choice::None || !want_highlights {
            (Some(text.to_string()), None)
        } else {
            let names: Vec<&str> = features.iter().map(|f| f.name.as_str()).collect();
            match self.provider.complete(&self.template.build(text, &names)) {
                Ok(reply) => (Some(text.to_string()), Some(parse_llm_response(&reply.text, &names))),
                Err(e) => {
                    tracing::warn!(query_id, error = %e, "LLM unavailable, keeping preference only");
                    fallback = true;
                    (Some(text.to_string()), None)
                }
            }
        };
        let shq = assemble_shq(a, b, w, raw_prompt, response.as_ref(), &features, highlight_len)?;
        let ack = Ack { query_id, w: w.value(), positives: shq.positives.len(), negatives: shq.negatives.len(), llm_fallback: fallback };

        let mut inner = self.lock();
        let entry = inner.entries.get(&query_id).ok_or(ServiceError::UnknownQuery(query_id))?;
        if let Some(prior) = prior_result(entry, labeler, query_id)? {
            return Ok(prior);
        }
        if entry.status == QueryStatus::Skipped {
            return Err(ServiceError::Withdrawn(query_id));
        }
        if let Some(dir) = &self.dataset_dir {
            append_shq(dir, &shq)?;
        }
        let entry = inner.entries.get_mut(&query_id).expect("checked above");
        entry.status = QueryStatus::Labeled;
        entry.lease = None;
        entry.outcome = Some((labeler.to_string(), ack.clone()));
        inner.labeled += 1;
        inner.fallbacks += usize::from(fallback);
        if let Some(batch) = inner.batch.as_mut() {
            batch.results.insert(query_id, shq);
        }
        self.changed.notify_all();
        Ok(ack)
    }

    pub fn status(&self) -> Status {
        let inner = self.lock();
        let (pending, quota) = match &inner.batch {
            Some(b) => (b.ids.iter().filter(|id| inner.entries[id].status == QueryStatus::Pending).count(), b.ids.len()),
            None => (0, 0),
        };
        Status { labeled: inner.labeled, pending, quota, phase: inner.phase }
    }

    pub fn llm_fallbacks(&self) -> usize {
        self.lock().fallbacks
    }

    /// Blocks until every query of the open batch is labeled or withdrawn,
    /// then closes the batch and returns its labels in query order. On
    /// timeout the unlabeled queries are withdrawn and whatever was labeled
    /// is returned; a batch with no labels at all is an error.
    pub fn wait_batch(&self, timeout: Option<Duration>) -> Result<Vec<SentimentHighlightedQuery>, ServiceError> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut inner = self.lock();
        loop {
            let done = match &inner.batch {
                None => return Err(ServiceError::NoBatch),
                Some(b) => b.ids.iter().all(|id| inner.entries[id].status != QueryStatus::Pending),
            };
            if done {
                break;
            }
            match deadline {
                None => inner = self.changed.wait(inner).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        withdraw_locked(&mut inner);
                        self.changed.notify_all();
                        break;
                    }
                    inner = self.changed.wait_timeout(inner, left).unwrap_or_else(|e| e.into_inner()).0;
                }
            }
        }
        let batch = inner.batch.take().expect("checked above");
        if batch.results.is_empty() && !batch.ids.is_empty() {
            inner.phase = Phase::Idle;
            return Err(ServiceError::TimedOut);
        }
        inner.phase = Phase::Training;
        Ok(batch.results.into_values().collect())
    }

    /// Withdraws the unlabeled queries of the open batch.
    pub fn withdraw(&self) {
        withdraw_locked(&mut self.lock());
        self.changed.notify_all();
    }

    pub fn set_phase(&self, phase: Phase) {
        self.lock().phase = phase;
    }
}

fn withdraw_locked(inner: &mut Inner) {
    let Some(ids) = inner.batch.as_ref().map(|b| b.ids.clone()) else {
        return;
    };
    for id in ids {
        let e = inner.entries.get_mut(&id).expect("batch ids are stored");
        if e.status == QueryStatus::Pending {
            e.status = QueryStatus::Skipped;
            e.lease = None;
        }
    }
}

fn prior_result(entry: &Entry, labeler: &str, query_id: u64) -> Result<Option<Ack>, ServiceError> {
    match &entry.outcome {
        Some((who, ack)) if who == labeler => Ok(Some(ack.clone())),
        Some(_) => Err(ServiceError::AlreadyLabeled(query_id)),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use prefrl_core::dataset::count_shq;
    use prefrl_core::envs::{EnvConfig, EnvKind};
    use prefrl_core::feedback::{LlmError, LlmReply, MockLlm};
    use prefrl_core::orchestrator::{sample_segments, Policy, PpoConfig};
    use prefrl_core::rng::seeded_rng;
    use prefrl_core::types::{Sentiment, DISTANCE_TO_HUMAN, SPEED};

    const EXAMPLE: &str = "was less close to hitting a human/wall and moved at a slower pace.";

    fn pairs(n: usize) -> Vec<(TrajectorySegment, TrajectorySegment)> {
        let cfg = EnvConfig::default_for(EnvKind::SocialNav);
        let mut env = cfg.build(seeded_rng(1, "env")).unwrap();
        let policy = Policy::new(env.obs_dim(), env.action_dim(), &PpoConfig::default(), &mut seeded_rng(1, "p")).unwrap();
        let mut episodes = 0;
        let segs = sample_segments(&mut *env, &policy, 2 * n, 20, false, &mut episodes, &mut seeded_rng(1, "s")).unwrap();
        let mut it = segs.into_iter().map(|s| s.segment);
        (0..n).map(|_| (it.next().unwrap(), it.next().unwrap())).collect()
    }

    fn board_with(provider: Arc<dyn LlmProvider>) -> (QueryBoard, Arc<ManualClock>) {
        let clock = Arc::new(ManualClock::default());
        (QueryBoard::new(provider, PromptTemplate::default(), clock.clone()), clock)
    }

    fn open(board: &QueryBoard, n: usize) -> Vec<u64> {
        board.open_batch(pairs(n), EnvKind::SocialNav.default_features(), true, 4)
    }

    fn submission(labeler: &str, choice: Choice, text: &str) -> LabelSubmission {
        LabelSubmission { query_id: None, choice, prompt_text: text.into(), labeler_id: labeler.into() }
    }

    #[test]
    fn status_counts_follow_submissions() {
        let (board, _) = board_with(Arc::new(MockLlm));
        assert_eq!(board.status(), Status { labeled: 0, pending: 0, quota: 0, phase: Phase::Idle });
        assert!(board.next_query("x").is_none());
        open(&board, 20);
        assert_eq!(board.status(), Status { labeled: 0, pending: 20, quota: 20, phase: Phase::Labeling });
        let q = board.next_query("x").unwrap();
        board.submit(q.query_id, &submission("x", Choice::A, "")).unwrap();
        assert_eq!((board.status().labeled, board.status().pending), (1, 19));
    }

    #[test]
    fn leases_are_disjoint_and_sticky() {
        let (board, _) = board_with(Arc::new(MockLlm));
        open(&board, 3);
        let a = board.next_query("ann").unwrap();
        let b = board.next_query("bob").unwrap();
        assert_ne!(a.query_id, b.query_id);
        assert_eq!(board.next_query("ann").unwrap().query_id, a.query_id);
        assert!(matches!(board.submit(a.query_id, &submission("bob", Choice::A, "")), Err(ServiceError::NotLeased(_))));
    }

    #[test]
    fn expired_lease_is_reissued() {
        let (board, clock) = board_with(Arc::new(MockLlm));
        open(&board, 1);
        let q = board.next_query("ann").unwrap();
        assert!(board.next_query("bob").is_none());
        clock.advance(LEASE + Duration::from_secs(1));
        assert!(matches!(board.submit(q.query_id, &submission("ann", Choice::A, "")), Err(ServiceError::LeaseExpired(_))));
        assert_eq!(board.next_query("bob").unwrap().query_id, q.query_id);
        assert!(matches!(board.submit(q.query_id, &submission("ann", Choice::A, "")), Err(ServiceError::NotLeased(_))));
        board.submit(q.query_id, &submission("bob", Choice::B, "")).unwrap();
    }

    #[test]
    fn served_frames_match_the_stored_segments() {
        let (board, _) = board_with(Arc::new(MockLlm));
        let p = pairs(1);
        board.open_batch(p.clone(), EnvKind::SocialNav.default_features(), true, 4);
        let q = board.next_query("x").unwrap();
        assert_eq!(serde_json::to_vec(&q.segment_a).unwrap(), serde_json::to_vec(&p[0].0.frames).unwrap());
        assert_eq!(serde_json::to_vec(&q.segment_b).unwrap(), serde_json::to_vec(&p[0].1.frames).unwrap());
    }

    fn label_one(board: &QueryBoard, choice: Choice, text: &str) -> SentimentHighlightedQuery {
        let q = board.next_query("x").unwrap();
        board.submit(q.query_id, &submission("x", choice, text)).unwrap();
        board.wait_batch(Some(Duration::ZERO)).unwrap().pop().unwrap()
    }

    #[test]
    fn choices_map_to_labels() {
        let (board, _) = board_with(Arc::new(MockLlm));
        open(&board, 1);
        let shq = label_one(&board, Choice::A, "");
        assert_eq!(shq.w, PreferenceLabel::First);
        assert!(shq.positives.is_empty() && shq.negatives.is_empty() && shq.raw_prompt.is_none());

        open(&board, 1);
        let shq = label_one(&board, Choice::None, EXAMPLE);
        assert_eq!(shq.w.value(), 0.5);
        assert_eq!(shq.raw_prompt.as_deref(), Some(EXAMPLE));
        assert!(shq.positives.is_empty() && shq.negatives.is_empty());
    }

    #[test]
    fn explanation_becomes_highlights_on_the_chosen_segment() {
        let (board, _) = board_with(Arc::new(MockLlm));
        open(&board, 1);
        let shq = label_one(&board, Choice::B, EXAMPLE);
        assert_eq!(shq.w.value(), 1.0);
        let features: Vec<&str> = shq.positives.iter().map(|h| h.feature.as_str()).collect();
        assert_eq!(features, vec![DISTANCE_TO_HUMAN, SPEED]);
        assert!(shq.negatives.is_empty());
        for h in &shq.positives {
            assert_eq!(h.segment_id, shq.segment_b.segment_id);
            assert_eq!(h.sentiment, Sentiment::Positive);
            assert_eq!(h.end_index - h.start_index, 4);
        }
    }

    #[test]
    fn repeated_submission_returns_the_first_result() {
        let (board, _) = board_with(Arc::new(MockLlm));
        open(&board, 2);
        let q = board.next_query("x").unwrap();
        let first = board.submit(q.query_id, &submission("x", Choice::B, EXAMPLE)).unwrap();
        let again = board.submit(q.query_id, &submission("x", Choice::A, "")).unwrap();
        assert_eq!(first, again);
        assert_eq!(board.status().labeled, 1);
        assert!(matches!(board.submit(q.query_id, &submission("y", Choice::A, "")), Err(ServiceError::AlreadyLabeled(_))));
        assert!(matches!(board.submit(999, &submission("x", Choice::A, "")), Err(ServiceError::UnknownQuery(999))));
    }

    #[test]
    fn invalid_submissions_are_rejected() {
        let (board, _) = board_with(Arc::new(MockLlm));
        open(&board, 1);
        let q = board.next_query("x").unwrap();
        let long = "a".repeat(MAX_PROMPT_CHARS + 1);
        assert!(matches!(board.submit(q.query_id, &submission("x", Choice::A, &long)), Err(ServiceError::Invalid(_))));
        let mut wrong = submission("x", Choice::A, "");
        wrong.query_id = Some(q.query_id + 1);
        assert!(matches!(board.submit(q.query_id, &wrong), Err(ServiceError::Invalid(_))));
    }

    struct Down;

    impl LlmProvider for Down {
        fn complete(&self, _: &str) -> Result<LlmReply, LlmError> {
            Err(LlmError::Transport { message: "timed out".into(), attempts: 4 })
        }
    }

    #[test]
    fn llm_failure_keeps_the_preference() {
        let (board, _) = board_with(Arc::new(Down));
        open(&board, 1);
        let q = board.next_query("x").unwrap();
        let ack = board.submit(q.query_id, &submission("x", Choice::A, EXAMPLE)).unwrap();
        assert!(ack.llm_fallback);
        assert_eq!((ack.positives, ack.negatives), (0, 0));
        assert_eq!(board.llm_fallbacks(), 1);
    }

    #[test]
    fn timeout_returns_partial_labels() {
        let (board, _) = board_with(Arc::new(MockLlm));
        open(&board, 3);
        assert!(matches!(board.wait_batch(Some(Duration::from_millis(10))), Err(ServiceError::TimedOut)));
        assert_eq!(board.status().phase, Phase::Idle);

        let ids = open(&board, 3);
        let q = board.next_query("x").unwrap();
        board.submit(q.query_id, &submission("x", Choice::A, "")).unwrap();
        let got = board.wait_batch(Some(Duration::from_millis(10))).unwrap();
        assert_eq!(got.len(), 1);
        assert!(matches!(board.submit(ids[1], &submission("x", Choice::A, "")), Err(ServiceError::Withdrawn(_))));
    }

    #[test]
    fn concurrent_labelers_lose_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let (board, _) = board_with(Arc::new(MockLlm));
        let board = Arc::new(board.with_dataset_dir(dir.path()));
        let ids = open(&board, 24);
        let workers: Vec<_> = (0..6)
            .map(|w| {
                let board = board.clone();
                std::thread::spawn(move || {
                    let me = format!("w{w}");
                    while let Some(q) = board.next_query(&me) {
                        let text = if q.query_id % 2 == 0 { EXAMPLE } else { "" };
                        board.submit(q.query_id, &submission(&me, Choice::B, text)).unwrap();
                        board.submit(q.query_id, &submission(&me, Choice::B, text)).unwrap();
                    }
                })
            })
            .collect();
        let labels = board.wait_batch(None).unwrap();
        for w in workers {
            w.join().unwrap();
        }
        assert_eq!(labels.len(), ids.len());
        assert_eq!(count_shq(dir.path()).unwrap(), ids.len());
        assert_eq!(board.status(), Status { labeled: 24, pending: 0, quota: 0, phase: Phase::Training });
    }
}

use prefrl_core::envs::EnvKind;
use prefrl_core::feedback::{LlmError, LlmProvider, LlmReply, PromptTemplate};
use prefrl_core::orchestrator::*;
use prefrl_core::rng::StreamRng;
use prefrl_core::types::{FeatureDescriptor, SegmentId, SentimentHighlightedQuery, TrajectorySegment};

fn tiny(kind: EnvKind, mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(kind, Preset::Desk);
    cfg.seed = 3;
    cfg.schedule.mode = mode;
    cfg.schedule.total_timesteps = 1024;
    cfg.schedule.queries = 12;
    cfg.schedule.reward_update_interval = Some(256);
    cfg.schedule.eval_interval = 256;
    cfg.schedule.eval_episodes = 2;
    cfg.schedule.segment_len = 20;
    cfg.reward.hidden = vec![8];
    cfg.reward.highlight_len = 4;
    cfg.reward.batch_size = 8;
    cfg.reward.epochs_initial = 3;
    cfg.reward.epochs_update = 2;
    cfg.ppo.hidden = vec![8];
    cfg.ppo.n_steps = 128;
    cfg.ppo.batch_size = 32;
    cfg.ppo.n_epochs = 2;
    cfg
}

fn run(cfg: &ExperimentConfig) -> RunArtifacts {
    let mut src = OracleSource::from_config(cfg).unwrap();
    run_experiment(cfg.clone(), &mut src).unwrap()
}

#[test]
fn training_never_reads_the_true_reward() {
    for kind in [EnvKind::PointReach, EnvKind::SocialNav] {
        let out = run(&tiny(kind, Mode::Predilect));
        assert_eq!(out.training_true_reward_reads, 0, "{kind}");
    }
}

#[test]
fn query_budget_is_spent_in_chunks() {
    let out = run(&tiny(EnvKind::PointReach, Mode::Predilect));
    let queries: Vec<usize> = out.log.entries.iter().map(|e| e.queries_labeled).collect();
    let steps: Vec<usize> = out.log.entries.iter().map(|e| e.timestep).collect();
    // 12 queries: 2 up front, then 2 per update; no update after the last chunk.
    assert_eq!(queries, vec![2, 4, 6, 8, 8]);
    assert_eq!(steps, vec![0, 256, 512, 768, 1024]);
    assert_eq!(out.dataset.labeled.len(), 8);
    assert!(out.log.entries[1..].iter().all(|e| e.mean_gain.is_none()));
}

#[test]
fn single_batch_labels_everything_up_front() {
    let mut cfg = tiny(EnvKind::SocialNav, Mode::Predilect);
    cfg.schedule.reward_update_interval = None;
    let out = run(&cfg);
    assert!(out.log.entries.iter().all(|e| e.queries_labeled == 12));
    assert_eq!(out.log.entries.last().unwrap().timestep, 1024);
    assert!(out.log.entries[1..].iter().all(|e| e.mean_gain.is_some()));
}

#[test]
fn runs_are_reproducible() {
    let cfg = tiny(EnvKind::PointReach, Mode::Predilect);
    let (a, b) = (run(&cfg), run(&cfg));
    assert_eq!(serde_json::to_string(&a.log).unwrap(), serde_json::to_string(&b.log).unwrap());
}

#[test]
fn zero_alpha_predilect_matches_baseline() {
    let baseline = run(&tiny(EnvKind::PointReach, Mode::Baseline));
    let mut cfg = tiny(EnvKind::PointReach, Mode::Predilect);
    cfg.reward.alpha_pos = 0.0;
    cfg.reward.alpha_neg = 0.0;
    let zero = run(&cfg);
    assert!(zero.dataset.labeled.iter().any(|q| !q.positives.is_empty() || !q.negatives.is_empty()));
    assert_eq!(serde_json::to_string(&baseline.log.entries).unwrap(), serde_json::to_string(&zero.log.entries).unwrap());
}

#[test]
fn highlights_change_the_outcome() {
    let baseline = run(&tiny(EnvKind::PointReach, Mode::Baseline));
    let predilect = run(&tiny(EnvKind::PointReach, Mode::Predilect));
    assert!(baseline.dataset.labeled.iter().all(|q| q.positives.is_empty() && q.negatives.is_empty()));
    assert_ne!(
        serde_json::to_string(&baseline.log.entries).unwrap(),
        serde_json::to_string(&predilect.log.entries).unwrap()
    );
}

/// Delegates to an oracle but fails one chosen labeling call.
struct Flaky {
    inner: OracleSource,
    calls: usize,
    fail_on: Option<usize>,
}

impl FeedbackSource for Flaky {
    fn needs_true_returns(&self) -> bool {
        self.inner.needs_true_returns()
    }

    fn prepare(&mut self, s: &[TrajectorySegment], f: &[FeatureDescriptor]) -> Result<Vec<FeatureDescriptor>, OrchestratorError> {
        self.inner.prepare(s, f)
    }

    fn record_true_returns(&mut self, r: &[(SegmentId, f64)]) {
        self.inner.record_true_returns(r)
    }

    fn label(&mut self, request: LabelRequest<'_>, rng: &mut StreamRng) -> Result<Vec<SentimentHighlightedQuery>, OrchestratorError> {
        self.calls += 1;
        if Some(self.calls) == self.fail_on {
            return Err(OrchestratorError::Source("labeler went away".into()));
        }
        self.inner.label(request, rng)
    }
}

#[test]
fn interrupted_run_resumes_from_checkpoint() {
    let cfg = tiny(EnvKind::PointReach, Mode::Predilect);
    let dir = tempfile::tempdir().unwrap();
    let mut flaky = Flaky { inner: OracleSource::from_config(&cfg).unwrap(), calls: 0, fail_on: Some(3) };
    let err = Experiment::new(cfg.clone(), &mut flaky).unwrap().with_output(dir.path()).run();
    assert!(matches!(err, Err(OrchestratorError::Source(_))));

    let mut fresh = OracleSource::from_config(&cfg).unwrap();
    let exp = Experiment::resume(dir.path(), &mut fresh).unwrap();
    assert!(exp.state().pending_labels);
    assert_eq!(exp.state().timesteps, 512);
    let out = exp.run().unwrap();
    let steps: Vec<usize> = out.log.entries.iter().map(|e| e.timestep).collect();
    assert_eq!(steps, vec![0, 256, 512, 768, 1024]);
    assert_eq!(out.log.entries.last().unwrap().queries_labeled, 8);
    assert_eq!(out.dataset.labeled.len(), 8);

    let reloaded = ExperimentLog::load(dir.path().join("log.json")).unwrap();
    assert_eq!(reloaded.entries.len(), 5);
}

#[test]
fn mock_llm_feedback_produces_highlights() {
    let mut cfg = tiny(EnvKind::SocialNav, Mode::Predilect);
    cfg.schedule.feedback = FeedbackKind::Llm;
    cfg.schedule.features = Some(vec!["Distance to human".into()]);
    let out = run(&cfg);
    assert_eq!(out.log.entries.last().unwrap().llm_fallbacks, 0);
    assert_eq!(out.log.meta.features.len(), 1);
    let explained: Vec<_> = out.dataset.labeled.iter().filter(|q| q.raw_prompt.is_some()).collect();
    assert!(!explained.is_empty());
    for q in &explained {
        let prompt = q.raw_prompt.as_deref().unwrap();
        assert!(prompt.contains("[distance to human]"), "{prompt}");
    }
    assert!(out.dataset.labeled.iter().any(|q| !q.positives.is_empty() || !q.negatives.is_empty()));
}

struct Down;

impl LlmProvider for Down {
    fn complete(&self, _: &str) -> Result<LlmReply, LlmError> {
        Err(LlmError::Status { status: 503, attempts: 4 })
    }
}

#[test]
fn unavailable_llm_keeps_preferences() {
    let cfg = tiny(EnvKind::SocialNav, Mode::Predilect);
    let mut src = OracleSource::new(cfg.oracle.clone(), cfg.env.polarity()).with_llm(Box::new(Down), PromptTemplate::default());
    let out = run_experiment(cfg, &mut src).unwrap();
    let last = out.log.entries.last().unwrap();
    assert!(last.llm_fallbacks > 0);
    assert_eq!(out.dataset.labeled.len(), last.queries_labeled);
    assert!(out.dataset.labeled.iter().all(|q| q.positives.is_empty() && q.negatives.is_empty()));
}

#[test]
fn unknown_feature_is_rejected() {
    let mut cfg = tiny(EnvKind::PointReach, Mode::Predilect);
    cfg.schedule.features = Some(vec!["temperature".into()]);
    let mut src = OracleSource::from_config(&cfg).unwrap();
    assert!(matches!(Experiment::new(cfg, &mut src), Err(OrchestratorError::Config(_))));
}

#[test]
fn curves_export_from_logs() {
    let out = run(&tiny(EnvKind::SocialNav, Mode::Predilect));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curves.csv");
    write_curves_csv(&path, &[out.log.clone()]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), out.log.entries.len() + 1);
    assert!(text.lines().nth(1).unwrap().ends_with(",predilect,3"));
}

use std::sync::Arc;

use prefrl_core::envs::{EnvConfig, EnvKind};
use prefrl_core::feedback::{MockLlm, PromptTemplate};
use prefrl_core::orchestrator::{sample_segments, Policy, PpoConfig};
use prefrl_core::rng::seeded_rng;
use prefrl_core::types::TrajectorySegment;
use prefrl_service::{ManualClock, QueryBoard};

pub const EXAMPLE: &str = "was less close to hitting a human/wall and moved at a slower pace.";

pub fn pairs(n: usize) -> Vec<(TrajectorySegment, TrajectorySegment)> {
    let cfg = EnvConfig::default_for(EnvKind::SocialNav);
    let mut env = cfg.build(seeded_rng(2, "env")).unwrap();
    let policy = Policy::new(env.obs_dim(), env.action_dim(), &PpoConfig::default(), &mut seeded_rng(2, "p")).unwrap();
    let mut episodes = 0;
    let segs = sample_segments(&mut *env, &policy, 2 * n, 20, false, &mut episodes, &mut seeded_rng(2, "s")).unwrap();
    let mut it = segs.into_iter().map(|s| s.segment);
    (0..n).map(|_| (it.next().unwrap(), it.next().unwrap())).collect()
}

pub fn board() -> (Arc<QueryBoard>, Arc<ManualClock>) {
    let clock = Arc::new(ManualClock::default());
    (Arc::new(QueryBoard::new(Arc::new(MockLlm), PromptTemplate::default(), clock.clone())), clock)
}

use rand::Rng;

use super::ppo::Policy;
use super::OrchestratorError;
use crate::envs::Environment;
use crate::types::{EpisodeMeta, StateActionPair, TrajectorySegment};

/// A sampled segment and, when requested, its true return.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSegment {
    pub segment: TrajectorySegment,
    pub true_return: Option<f64>,
}

/// Rolls the stochastic policy from fresh episodes: after a warm-up of
/// `0..=len` steps drawn uniformly, the next `len` steps form a segment.
/// An episode that ends mid-segment is reset and recording continues.
/// `episode_counter` numbers the episodes across calls. True rewards are
/// read only when `read_true_returns` is set.
pub fn sample_segments<E, R>(
    env: &mut E,
    policy: &Policy,
    count: usize,
    len: usize,
    read_true_returns: bool,
    episode_counter: &mut u64,
    rng: &mut R,
) -> Result<Vec<SampledSegment>, OrchestratorError>
where
    E: Environment + ?Sized,
    R: Rng + ?Sized,
{
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut obs = env.reset();
        *episode_counter += 1;
        let gap = rng.random_range(0..=len);
        let mut step = 0u64;
        for _ in 0..gap {
            let a = policy.sample(obs.as_slice(), rng)?;
            let outcome = env.step(&a.action)?;
            step += 1;
            obs = if outcome.done {
                step = 0;
                *episode_counter += 1;
                env.reset()
            } else {
                outcome.observation
            };
        }
        let meta = EpisodeMeta { episode: *episode_counter - 1, start_step: step };
        let mut pairs = Vec::with_capacity(len);
        let mut frames = Vec::with_capacity(len);
        let mut total = 0.0;
        for _ in 0..len {
            let a = policy.sample(obs.as_slice(), rng)?;
            frames.push(env.frame());
            let outcome = env.step(&a.action)?;
            if read_true_returns {
                total += env.last_true_reward();
            }
            pairs.push(StateActionPair { state: obs, action: a.action });
            obs = if outcome.done {
                *episode_counter += 1;
                env.reset()
            } else {
                outcome.observation
            };
        }
        out.push(SampledSegment {
            segment: TrajectorySegment::new(pairs, meta, frames)?,
            true_return: read_true_returns.then_some(total),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{CountingEnv, EnvConfig, EnvKind};
    use crate::orchestrator::config::PpoConfig;
    use crate::rng::seeded_rng;

    fn setup(kind: EnvKind) -> (CountingEnv<Box<dyn Environment>>, Policy) {
        let env = EnvConfig::default_for(kind).build(seeded_rng(0, "env")).unwrap();
        let cfg = PpoConfig { hidden: vec![8], ..Default::default() };
        let policy = Policy::new(env.obs_dim(), env.action_dim(), &cfg, &mut seeded_rng(0, "p")).unwrap();
        (CountingEnv::new(env), policy)
    }

    #[test]
    fn segments_have_requested_shape() {
        let (mut env, policy) = setup(EnvKind::SocialNav);
        let mut episodes = 0;
        let segs = sample_segments(&mut env, &policy, 5, 20, true, &mut episodes, &mut seeded_rng(1, "s")).unwrap();
        assert_eq!(segs.len(), 5);
        for s in &segs {
            assert_eq!(s.segment.len(), 20);
            assert_eq!(s.segment.frames.len(), 20);
            assert!(s.true_return.unwrap().is_finite());
        }
        assert!(episodes >= 5);
        assert_eq!(env.true_reward_reads(), 100);
    }

    #[test]
    fn returns_are_optional() {
        let (mut env, policy) = setup(EnvKind::PointReach);
        let segs = sample_segments(&mut env, &policy, 3, 10, false, &mut 0, &mut seeded_rng(2, "s")).unwrap();
        assert!(segs.iter().all(|s| s.true_return.is_none()));
        assert_eq!(env.true_reward_reads(), 0);
    }

    #[test]
    fn segments_span_episode_boundaries() {
        let (mut env, policy) = setup(EnvKind::PointReach);
        // Episodes last 100 steps, so 150-step segments must wrap.
        let segs = sample_segments(&mut env, &policy, 2, 150, true, &mut 0, &mut seeded_rng(3, "s")).unwrap();
        assert!(segs.iter().all(|s| s.segment.len() == 150));
    }
}

use serde::{Deserialize, Serialize};

use super::ppo::Policy;
use super::OrchestratorError;
use crate::envs::EnvConfig;
use crate::reward::RewardModel;
use crate::rng::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    /// Standard error of the mean over episodes.
    pub stderr: f64,
    /// Mean learned-reward return over the same episodes.
    pub model_return: Option<f64>,
    pub mean_gain: Option<f64>,
}

/// Mean and standard error (sample deviation over `sqrt(n)`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `episodes` full episodes with the squashed mean action. The
/// environment is rebuilt from `(seed, "eval")` on every call, so repeated
/// evaluations of one run see the same start states.
pub fn evaluate_policy(
    policy: &Policy,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    reward_model: Option<&RewardModel>,
) -> Result<EvalResult, OrchestratorError> {
    let mut env = env_config.build(seeded_rng(seed, "eval"))?;
    let mut returns = Vec::with_capacity(episodes);
    let mut model_total = 0.0;
    let mut gain_sum = 0.0;
    let mut gain_count = 0usize;
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        loop {
            let action = policy.deterministic(obs.as_slice())?;
            if let Some(m) = reward_model {
                model_total += m.reward_of(obs.as_slice(), action.as_slice())?;
            }
            let outcome = env.step(&action)?;
            total += env.last_true_reward();
            if let Some(g) = env.gain() {
                gain_sum += g;
                gain_count += 1;
            }
            if outcome.done {
                break;
            }
            obs = outcome.observation;
        }
        returns.push(total);
    }
    let (mean_return, stderr) = mean_stderr(&returns);
    Ok(EvalResult {
        mean_return,
        stderr,
        model_return: reward_model.map(|_| model_total / episodes as f64),
        mean_gain: (gain_count > 0).then(|| gain_sum / gain_count as f64),
    })
}

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::OrchestratorError;
use crate::reward::LossBreakdown;
use crate::rng::RNG_ALGORITHM;
use crate::types::FeatureDescriptor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub env: String,
    pub mode: String,
    pub rng_algorithm: String,
    /// Features with the thresholds the oracle settled on, if any.
    pub features: Vec<FeatureDescriptor>,
    pub config: ExperimentConfig,
}

impl RunMeta {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            seed: config.seed,
            env: config.env.kind().name().into(),
            mode: config.schedule.mode.name().into(),
            rng_algorithm: RNG_ALGORITHM.into(),
            features: vec![],
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub timestep: usize,
    pub true_return: f64,
    pub true_return_stderr: f64,
    pub model_return: f64,
    pub queries_labeled: usize,
    /// Final-epoch loss of the reward training that ran since the previous entry.
    pub reward_loss: Option<LossBreakdown>,
    /// Mean social-force gain over the training rollouts since the previous entry.
    pub mean_gain: Option<f64>,
    /// Mean gain of the evaluation episodes.
    pub eval_mean_gain: Option<f64>,
    /// Queries that fell back to preference-only because the LLM failed.
    pub llm_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub meta: RunMeta,
    pub entries: Vec<LogEntry>,
}

impl ExperimentLog {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), OrchestratorError> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn final_entry(&self) -> Option<&LogEntry> {
        self.entries.last()
    }
}

/// `timestep,true_return,stderr,mode,seed` rows for every entry of every log.
pub fn write_curves_csv(path: impl AsRef<Path>, logs: &[ExperimentLog]) -> Result<(), OrchestratorError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "timestep,true_return,stderr,mode,seed")?;
    for log in logs {
        for e in &log.entries {
            writeln!(out, "{},{},{},{},{}", e.timestep, e.true_return, e.true_return_stderr, log.meta.mode, log.meta.seed)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `timestep,mean_gain,mode,seed` rows for entries that carry a gain.
pub fn write_force_csv(path: impl AsRef<Path>, logs: &[ExperimentLog]) -> Result<(), OrchestratorError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "timestep,mean_gain,mode,seed")?;
    for log in logs {
        for e in &log.entries {
            if let Some(g) = e.mean_gain {
                writeln!(out, "{},{},{},{}", e.timestep, g, log.meta.mode, log.meta.seed)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(t: usize, gain: Option<f64>) -> LogEntry {
        LogEntry {
            timestep: t,
            true_return: -1.5,
            true_return_stderr: 0.25,
            model_return: 0.0,
            queries_labeled: 10,
            reward_loss: None,
            mean_gain: gain,
            eval_mean_gain: None,
            llm_fallbacks: 0,
        }
    }

    #[test]
    fn csv_exports() {
        let dir = tempfile::tempdir().unwrap();
        let log = ExperimentLog {
            meta: RunMeta::new(&ExperimentConfig { seed: 3, ..Default::default() }),
            entries: vec![entry(0, None), entry(2048, Some(0.75))],
        };
        write_curves_csv(dir.path().join("curves.csv"), std::slice::from_ref(&log)).unwrap();
        write_force_csv(dir.path().join("force.csv"), std::slice::from_ref(&log)).unwrap();
        let curves = std::fs::read_to_string(dir.path().join("curves.csv")).unwrap();
        assert_eq!(
            curves,
            "timestep,true_return,stderr,mode,seed\n0,-1.5,0.25,predilect,3\n2048,-1.5,0.25,predilect,3\n"
        );
        let force = std::fs::read_to_string(dir.path().join("force.csv")).unwrap();
        assert_eq!(force, "timestep,mean_gain,mode,seed\n2048,0.75,predilect,3\n");
        log.save(dir.path().join("log.json")).unwrap();
        assert_eq!(ExperimentLog::load(dir.path().join("log.json")).unwrap(), log);
    }
}

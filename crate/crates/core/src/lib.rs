//! Preference-based reward learning where labels can carry trajectory
//! highlights: short windows of a preferred segment tagged as positive or
//! negative evidence for a named feature.
//!
//! The crate is organised bottom-up:
//!
//! * [`types`] – segments, preferences, highlights and metric tensors,
//! * [`nn`] – dense networks, exact gradients and Adam,
//! * [`envs`] – point-mass and social-navigation simulators,
//! * [`reward`] – the reward model and its regularised preference loss,
//! * [`feedback`] – oracle, prompt/LLM and highlight search,
//! * [`orchestrator`] – the PPO training loop and experiment logs.

pub mod dataset;
pub mod envs;
pub mod feedback;
pub mod nn;
pub mod orchestrator;
pub mod reward;
pub mod rng;
pub mod types;

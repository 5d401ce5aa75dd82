//! Language-model providers: a deterministic keyword mock and a
//! chat-completion HTTP client.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::prompt::split_prompt;
use super::LlmResponse;
use crate::types::{Magnitude, Sentiment, SentimentTriplet, DISTANCE_TO_GOAL, DISTANCE_TO_HUMAN, SPEED};

pub const ENDPOINT_VAR: &str = "LLM_API_URL";
pub const API_KEY_VAR: &str = "LLM_API_KEY";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("no endpoint configured (set {ENDPOINT_VAR})")]
    MissingEndpoint,
    #[error("no credential found in {0}")]
    MissingCredential(String),
    #[error("HTTP status {status} after {attempts} attempt(s)")]
    Status { status: u16, attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("unexpected response body: {0}")]
    Format(String),
    #[error("prompt not in the expected template")]
    UnrecognisedPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmProviderConfig {
    pub provider: ProviderKind,
    /// Overrides `LLM_API_URL` when set.
    pub endpoint: Option<String>,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: f64,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for LlmProviderConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::Mock,
            endpoint: None,
            model: "gpt-4".into(),
            api_key_env: API_KEY_VAR.into(),
            timeout_secs: 30.0,
            retries: 3,
            backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmReply {
    pub text: String,
    pub attempts: u32,
}

pub trait LlmProvider: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<LlmReply, LlmError>;
}

pub fn query_llm(prompt: &str, provider: &dyn LlmProvider) -> Result<LlmReply, LlmError> {
    provider.complete(prompt)
}

pub fn build_provider(config: &LlmProviderConfig) -> Result<Box<dyn LlmProvider>, LlmError> {
    Ok(match config.provider {
        ProviderKind::Mock => Box::new(MockLlm),
        ProviderKind::Remote => Box::new(RemoteLlm::from_config(config)?),
    })
}

/// Keyword rules over the user text: each clause is matched against feature
/// synonyms and value cues; clauses with a criticism cue are negative.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockLlm;

const NEGATIVE_CUES: &[&str] =
    &["bad", "too ", "dangerous", "unsafe", "worse", "poor", "should not", "shouldn't", "didn't like", "annoying"];

fn synonyms(feature: &str) -> &'static [&'static str] {
    match feature {
        DISTANCE_TO_HUMAN => &["human", "person", "people", "pedestrian", "someone"],
        DISTANCE_TO_GOAL => &["goal", "star", "target", "destination"],
        SPEED => &["pace", "speed", "fast", "slow", "quick", "rapid", "hurr"],
        _ => &[],
    }
}

/// Ordered cue list; the first cue found decides the value.
fn value_cues(feature: &str) -> &'static [(&'static str, Magnitude)] {
    use Magnitude::{High, Low};
    match feature {
        DISTANCE_TO_HUMAN | DISTANCE_TO_GOAL => &[
            ("less close", High),
            ("not close", High),
            ("farther", High),
            ("further", High),
            ("far ", High),
            ("away", High),
            ("more space", High),
            ("more distance", High),
            ("closer", Low),
            ("close", Low),
            ("nearer", Low),
            ("near", Low),
            ("reached", Low),
        ],
        SPEED => &[
            ("less fast", Low),
            ("not fast", Low),
            ("slower", Low),
            ("slow", Low),
            ("calm", Low),
            ("faster", High),
            ("fast", High),
            ("quick", High),
            ("rapid", High),
            ("hurr", High),
        ],
        _ => &[],
    }
}

impl MockLlm {
    pub fn respond<S: AsRef<str>>(user_text: &str, features: &[S]) -> String {
        let lower = user_text.to_lowercase();
        let clauses: Vec<&str> = lower
            .split([',', ';', '.', '!', '?'])
            .flat_map(|c| c.split(" and "))
            .flat_map(|c| c.split(" but "))
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .collect();
        let mut triplets: Vec<SentimentTriplet> = Vec::new();
        for feature in features.iter().map(AsRef::as_ref) {
            for clause in &clauses {
                let padded = format!("{clause} ");
                if !synonyms(feature).iter().any(|s| padded.contains(s)) {
                    continue;
                }
                let Some(&(_, value)) = value_cues(feature).iter().find(|(cue, _)| padded.contains(cue)) else {
                    continue;
                };
                let sentiment = if NEGATIVE_CUES.iter().any(|c| padded.contains(c)) {
                    Sentiment::Negative
                } else {
                    Sentiment::Positive
                };
                if !triplets.iter().any(|t| t.feature == feature && t.sentiment == sentiment) {
                    triplets.push(SentimentTriplet::new(feature, sentiment, value));
                }
            }
        }
        LlmResponse::format_triplets(&triplets)
    }
}

impl LlmProvider for MockLlm {
    fn complete(&self, prompt: &str) -> Result<LlmReply, LlmError> {
        let (features, text) = split_prompt(prompt).ok_or(LlmError::UnrecognisedPrompt)?;
        Ok(LlmReply { text: Self::respond(&text, &features), attempts: 1 })
    }
}

/// Chat-completion client: POSTs `{model, messages: [{role: "user", content}]}`
/// with a bearer token and reads `choices[0].message.content`. Transport
/// errors and 5xx/429 responses are retried with exponential backoff.
pub struct RemoteLlm {
    client: reqwest::blocking::Client,
    url: String,
    api_key: String,
    model: String,
    retries: u32,
    backoff: Duration,
}

impl RemoteLlm {
    pub fn new(url: &str, api_key: &str, model: &str, timeout: Duration, retries: u32, backoff: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Transport { message: e.to_string(), attempts: 0 })?;
        Ok(Self { client, url: url.into(), api_key: api_key.into(), model: model.into(), retries, backoff })
    }

    pub fn from_config(config: &LlmProviderConfig) -> Result<Self, LlmError> {
        let url = match &config.endpoint {
            Some(u) => u.clone(),
            None => std::env::var(ENDPOINT_VAR).map_err(|_| LlmError::MissingEndpoint)?,
        };
        let key = std::env::var(&config.api_key_env).map_err(|_| LlmError::MissingCredential(config.api_key_env.clone()))?;
        Self::new(
            &url,
            &key,
            &config.model,
            Duration::from_secs_f64(config.timeout_secs),
            config.retries,
            Duration::from_millis(config.backoff_ms),
        )
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, (LlmError, bool)> {
        let resp = self
            .client
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| (LlmError::Transport { message: e.to_string(), attempts: 0 }, true))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status.is_server_error() || status.as_u16() == 429;
            return Err((LlmError::Status { status: status.as_u16(), attempts: 0 }, retryable));
        }
        let value: serde_json::Value = resp
            .json()
            .map_err(|e| (LlmError::Transport { message: e.to_string(), attempts: 0 }, true))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| (LlmError::Format(value.to_string()), false))
    }
}

impl LlmProvider for RemoteLlm {
    fn complete(&self, prompt: &str) -> Result<LlmReply, LlmError> {
        let body = json!({ "model": self.model, "messages": [{ "role": "user", "content": prompt }] });
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(LlmReply { text, attempts }),
                Err((err, retryable)) => {
                    if !retryable || attempts > self.retries {
                        return Err(match err {
                            LlmError::Status { status, .. } => LlmError::Status { status, attempts },
                            LlmError::Transport { message, .. } => LlmError::Transport { message, attempts },
                            other => other,
                        });
                    }
                    let wait = self.backoff * 2u32.saturating_pow(attempts - 1);
                    tracing::warn!(attempt = attempts, error = %err, wait_ms = wait.as_millis() as u64, "LLM request failed, retrying");
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

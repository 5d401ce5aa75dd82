use std::sync::OnceLock;

use regex::Regex;

use super::LlmResponse;
use crate::types::{Magnitude, Sentiment, SentimentTriplet};

fn triplet_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(
            r"(?i)\[\s*feature\s*:\s*([^,\[\]]+?)\s*,\s*sentiment\s*:\s*(positive|negative)\s*,\s*value\s*:\s*(high|low)\s*\]",
        )
        .expect("valid triplet regex")
    })
}

/// Extracts `[feature: X, sentiment: Y, value: Z]` triplets. Matching is
/// case-insensitive and whitespace-tolerant; unknown features and malformed
/// entries are dropped, and only the first triplet per (feature, sentiment)
/// is kept. Feature names are returned in their configured spelling.
pub fn parse_llm_response<S: AsRef<str>>(raw: &str, features: &[S]) -> LlmResponse {
    let mut triplets: Vec<SentimentTriplet> = Vec::new();
    for cap in triplet_pattern().captures_iter(raw) {
        let name = cap[1].split_whitespace().collect::<Vec<_>>().join(" ");
        let Some(feature) = features.iter().map(AsRef::as_ref).find(|f| f.eq_ignore_ascii_case(&name)) else {
            continue;
        };
        let sentiment =
            if cap[2].eq_ignore_ascii_case("positive") { Sentiment::Positive } else { Sentiment::Negative };
        let value = if cap[3].eq_ignore_ascii_case("high") { Magnitude::High } else { Magnitude::Low };
        if !triplets.iter().any(|t| t.feature == feature && t.sentiment == sentiment) {
            triplets.push(SentimentTriplet::new(feature, sentiment, value));
        }
    }
    LlmResponse { triplets, raw_text: raw.to_string() }
}

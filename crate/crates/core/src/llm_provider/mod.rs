//! Language-model providers: text generation plus continuation scoring.
//!
//! [`MockProvider`] is a deterministic, simulator-backed stand-in that writes
//! correct scripts (optionally corrupted with injected errors) and judges
//! candidates by executing them. [`HttpProvider`] speaks a small JSON wire
//! protocol to a remote model server.

mod canonical;
mod http;
mod mock;

pub use canonical::{canonical_solution, inject_error, CanonicalSolution, InjectedError};
pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{MockProvider, MockProviderConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub max_tokens: usize,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    /// Greedy request with a generous token budget.
    pub fn new(prompt_text: impl Into<String>) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            max_tokens: 1024,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest("temperature must be finite and >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinishReason {
    Stop,
    Length,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub finish_reason: FinishReason,
}

/// Log-probability (or logit) per requested continuation, in request order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationScores(Vec<(String, f64)>);

impl ContinuationScores {
    pub fn new(entries: Vec<(String, f64)>) -> Result<Self, ProviderError> {
        if let Some((k, v)) = entries.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ProviderError::MalformedResponse(format!("non-finite score {v} for `{k}`")));
        }
        Ok(Self(entries))
    }

    pub fn get(&self, continuation: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == continuation).map(|(_, v)| *v)
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("provider does not expose continuation scores")]
    ScoringUnsupported,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

pub(crate) fn check_continuations(continuations: &[String]) -> Result<(), ProviderError> {
    if continuations.is_empty() {
        return Err(ProviderError::InvalidRequest("no continuations to score".into()));
    }
    for (i, c) in continuations.iter().enumerate() {
        if continuations[..i].contains(c) {
            return Err(ProviderError::InvalidRequest(format!("duplicate continuation `{c}`")));
        }
    }
    Ok(())
}

/// A language model as seen by the agents.
pub trait LanguageModel: Send + Sync {
    /// Short human-readable identity, used in report fingerprints.
    fn describe(&self) -> String;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, ProviderError>;

    fn score_continuations(&self, prompt_prefix: &str, continuations: &[String]) -> Result<ContinuationScores, ProviderError>;

    /// Score each `shared_prefix + block`. Equivalent to one
    /// [`score_continuations`](Self::score_continuations) call per block;
    /// implementations may reuse work on the shared prefix.
    fn batch_score_shared_prefix(
        &self,
        shared_prefix: &str,
        candidate_blocks: &[String],
        continuations: &[String],
    ) -> Result<Vec<ContinuationScores>, ProviderError> {
        if candidate_blocks.is_empty() {
            return Err(ProviderError::InvalidRequest("no candidate blocks".into()));
        }
        candidate_blocks
            .iter()
            .map(|block| self.score_continuations(&format!("{shared_prefix}{block}"), continuations))
            .collect()
    }
}

/// `yes`/`no` matching used by scorers: trimmed, case-insensitive.
pub fn normalize_answer(continuation: &str) -> String {
    continuation.trim().to_lowercase()
}

/// Named providers; agents refer to theirs by name.
#[derive(Clone, Default)]
pub struct ProviderRegistry {
    providers: std::collections::BTreeMap<String, std::sync::Arc<dyn LanguageModel>>,
}

impl ProviderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding one provider under `name`.
    pub fn single(name: impl Into<String>, provider: std::sync::Arc<dyn LanguageModel>) -> Self {
        Self::new().with(name, provider)
    }

    pub fn with(mut self, name: impl Into<String>, provider: std::sync::Arc<dyn LanguageModel>) -> Self {
        self.insert(name, provider);
        self
    }

    pub fn insert(&mut self, name: impl Into<String>, provider: std::sync::Arc<dyn LanguageModel>) {
        self.providers.insert(name.into(), provider);
    }

    pub fn get(&self, name: &str) -> Option<&dyn LanguageModel> {
        self.providers.get(name).map(|p| p.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.providers.keys().map(String::as_str)
    }
}

impl std::fmt::Debug for ProviderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.providers.iter().map(|(k, v)| (k, v.describe())))
            .finish()
    }
}

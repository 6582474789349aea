//! Interfaces to LLM chat, embedding and token-scoring services.
//!
//! Every service is a trait object so detectors and pipelines run the same
//! way against live HTTP endpoints and the deterministic in-process doubles
//! in [`mock`]. Cross-cutting behavior is layered by wrappers:
//!
//! * [`Cached`] stores responses content-addressed on disk,
//! * [`Resilient`] bounds concurrency and retries transient failures,
//! * [`Audited`] appends every chat request/response to a JSON-lines file.

mod audit;
mod cache;
mod http;
pub mod mock;
mod retry;

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use audit::{AuditLog, Audited};
pub use cache::{Cached, CacheStats, ResponseCache};
pub use http::{HttpEmbedder, HttpTokenScorer, OpenAiChat};
pub use retry::{Resilient, RetryPolicy, Semaphore, SemaphorePermit};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("input text is empty")]
    EmptyInput,
    #[error("credential environment variable {var} is not set")]
    MissingCredential { var: String },
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("request blocked by the provider's safety filter")]
    SafetyFiltered,
    #[error("prompt of ~{estimated_tokens} tokens exceeds the context window of {limit}")]
    ContextOverflow { estimated_tokens: usize, limit: usize },
    #[error("only {got} tokens scored, at least {min} required")]
    TooShort { got: usize, min: usize },
    #[error("invalid token score at position {index}: {detail}")]
    InvalidTokenScore { index: usize, detail: String },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ProviderError> },
    #[error("cache failure: {0}")]
    Cache(String),
}

impl ProviderError {
    /// Transport-class failures (including truncated or unparseable bodies),
    /// rate limiting and server errors are retried; everything else is final.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Malformed(_) => true,
            ProviderError::Http { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

/// Dense text embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    /// Checks the vector is non-empty, finite and not all zero.
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Result<Self, ProviderError> {
        if values.is_empty() {
            return Err(ProviderError::InvalidEmbedding("zero-length vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidEmbedding("non-finite entry".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(ProviderError::InvalidEmbedding("all-zero vector".into()));
        }
        Ok(Self { values, model_id: model_id.into() })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Scorer statistics for one realized token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    /// Log probability of the realized token (natural log, ≤ 0).
    pub logprob: f64,
    /// 1-based rank of the realized token in the next-token distribution.
    pub rank: u64,
    /// Entropy of the next-token distribution, in nats.
    pub entropy: f64,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, logprob: f64, rank: u64, entropy: f64) -> Self {
        Self { token: token.into(), logprob, rank, entropy }
    }

    pub fn check(&self) -> Result<(), String> {
        if !self.logprob.is_finite() || self.logprob > 0.0 {
            return Err(format!("logprob {} must be finite and ≤ 0", self.logprob));
        }
        if self.rank < 1 {
            return Err("rank must be ≥ 1".into());
        }
        if !self.entropy.is_finite() || self.entropy < 0.0 {
            return Err(format!("entropy {} must be finite and ≥ 0", self.entropy));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatPrompt {
    pub system: String,
    pub user: String,
}

impl ChatPrompt {
    pub fn new(system: impl Into<String>, user: impl Into<String>) -> Self {
        Self { system: system.into(), user: user.into() }
    }

    pub fn is_empty(&self) -> bool {
        self.system.trim().is_empty() && self.user.trim().is_empty()
    }

    /// Rough token estimate (four characters per token).
    pub fn estimated_tokens(&self) -> usize {
        (self.system.chars().count() + self.user.chars().count()).div_ceil(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct GenerationParams {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Ask the provider for a JSON object response.
    #[serde(default)]
    pub json_mode: bool,
    /// Distinguishes deliberate re-asks of an identical prompt in cache keys;
    /// never sent to the provider.
    #[serde(default)]
    pub nonce: u32,
}


/// Connection settings for one remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub credential_env: Option<String>,
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub context_window_tokens: Option<usize>,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    4
}
fn default_backoff_ms() -> u64 {
    500
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            credential_env: None,
            model_id: model_id.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
            cache_dir: None,
            context_window_tokens: None,
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout_secs > 0.0) {
            return Err(ProviderError::Config("timeout must be > 0".into()));
        }
        if self.concurrency < 1 {
            return Err(ProviderError::Config("concurrency limit must be ≥ 1".into()));
        }
        if self.model_id.trim().is_empty() {
            return Err(ProviderError::Config("model_id is empty".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.backoff_base_ms),
            max_delay: Duration::from_secs(30),
        }
    }

    /// Reads the API key from the configured environment variable.
    pub fn credential(&self) -> Result<Option<String>, ProviderError> {
        match &self.credential_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::MissingCredential { var: var.clone() }),
        }
    }
}

pub trait Embedder: Send + Sync {
    fn model_id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
}

pub trait ChatModel: Send + Sync {
    fn model_id(&self) -> &str;
    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError>;
}

/// Per-token statistics of a text under one scoring model.
pub trait TokenScorer: Send + Sync {
    fn model_id(&self) -> &str;
    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError>;
}

/// Observer and cross streams for the perplexity-ratio detector. The cross
/// stream's `logprob` holds, per position, the negated cross-entropy of the
/// observer against the performer's next-token distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossStreams {
    pub observer: Vec<TokenScore>,
    pub cross: Vec<TokenScore>,
}

pub trait CrossScorer: Send + Sync {
    fn model_id(&self) -> &str;
    fn cross_streams(&self, text: &str) -> Result<CrossStreams, ProviderError>;
}

/// Two token scorers combined into a [`CrossScorer`]: the first yields the
/// observer stream, the second the cross stream.
pub struct ScorerPair<O, C> {
    pub observer: O,
    pub cross: C,
    id: String,
}

impl<O: TokenScorer, C: TokenScorer> ScorerPair<O, C> {
    pub fn new(observer: O, cross: C) -> Self {
        let id = format!("{}|{}", observer.model_id(), cross.model_id());
        Self { observer, cross, id }
    }
}

impl<O: TokenScorer, C: TokenScorer> CrossScorer for ScorerPair<O, C> {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn cross_streams(&self, text: &str) -> Result<CrossStreams, ProviderError> {
        Ok(CrossStreams {
            observer: self.observer.score_tokens(text)?,
            cross: self.cross.score_tokens(text)?,
        })
    }
}

macro_rules! forward_refs {
    ($($ptr:ty),*) => {$(
        impl<T: Embedder + ?Sized> Embedder for $ptr {
            fn model_id(&self) -> &str { (**self).model_id() }
            fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> { (**self).embed(text) }
        }
        impl<T: ChatModel + ?Sized> ChatModel for $ptr {
            fn model_id(&self) -> &str { (**self).model_id() }
            fn generate(&self, p: &ChatPrompt, g: &GenerationParams) -> Result<String, ProviderError> {
                (**self).generate(p, g)
            }
        }
        impl<T: TokenScorer + ?Sized> TokenScorer for $ptr {
            fn model_id(&self) -> &str { (**self).model_id() }
            fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
                (**self).score_tokens(text)
            }
        }
        impl<T: CrossScorer + ?Sized> CrossScorer for $ptr {
            fn model_id(&self) -> &str { (**self).model_id() }
            fn cross_streams(&self, text: &str) -> Result<CrossStreams, ProviderError> {
                (**self).cross_streams(text)
            }
        }
    )*};
}

forward_refs!(&T, Box<T>, std::sync::Arc<T>);

/// Embeds `text`, rejecting empty input before any provider call.
pub fn embed(embedder: &dyn Embedder, text: &str) -> Result<EmbeddingVector, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    embedder.embed(text)
}

pub fn generate(
    model: &dyn ChatModel,
    prompt: &ChatPrompt,
    params: &GenerationParams,
) -> Result<String, ProviderError> {
    if prompt.is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    model.generate(prompt, params)
}

pub const DEFAULT_MIN_TOKENS: usize = 10;

/// Scores `text` and checks every entry plus the minimum-length rule.
pub fn token_scores(
    scorer: &dyn TokenScorer,
    text: &str,
    min_tokens: usize,
) -> Result<Vec<TokenScore>, ProviderError> {
    if text.trim().is_empty() {
        return Err(ProviderError::EmptyInput);
    }
    let scores = scorer.score_tokens(text)?;
    check_stream(&scores, min_tokens)?;
    Ok(scores)
}

pub fn check_stream(scores: &[TokenScore], min_tokens: usize) -> Result<(), ProviderError> {
    for (index, s) in scores.iter().enumerate() {
        s.check().map_err(|detail| ProviderError::InvalidTokenScore { index, detail })?;
    }
    if scores.len() < min_tokens {
        return Err(ProviderError::TooShort { got: scores.len(), min: min_tokens });
    }
    Ok(())
}

//! Builds provider stacks (client → retries → call counter → cache) from
//! the run configuration.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};

use revdetect::providers::mock::{HashEmbedder, LexiconScorer, MockChat};
use revdetect::providers::{
    Cached, ChatModel, ChatPrompt, CrossScorer, Embedder, EmbeddingVector, GenerationParams, HttpEmbedder,
    HttpTokenScorer, OpenAiChat, ProviderError, ResponseCache, Resilient, ScorerPair, TokenScore, TokenScorer,
};

use crate::config::{ProviderSpec, RunConfig};

const MOCK_EMBED_DIM: usize = 512;

/// Counts calls that reach the underlying provider, i.e. cache misses.
pub struct Counted<P> {
    inner: P,
    calls: Arc<AtomicUsize>,
}

impl<P> Counted<P> {
    fn hit(&self) {
        self.calls.fetch_add(1, Ordering::Relaxed);
    }
}

impl<P: Embedder> Embedder for Counted<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.hit();
        self.inner.embed(text)
    }
}

impl<P: ChatModel> ChatModel for Counted<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError> {
        self.hit();
        self.inner.generate(prompt, params)
    }
}

impl<P: TokenScorer> TokenScorer for Counted<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
        self.hit();
        self.inner.score_tokens(text)
    }
}

/// Every provider named in the run configuration.
pub struct Providers {
    pub embedder: Option<Box<dyn Embedder>>,
    pub chat: BTreeMap<String, Box<dyn ChatModel>>,
    pub scorer: Option<Box<dyn TokenScorer>>,
    pub cross: Option<Box<dyn CrossScorer>>,
    calls: Arc<AtomicUsize>,
}

impl Providers {
    /// Number of calls that missed the cache so far.
    pub fn provider_calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn embedder(&self) -> Result<&dyn Embedder> {
        self.embedder.as_deref().ok_or_else(|| anyhow!("no embedder configured (providers.embedder)"))
    }

    pub fn chat(&self, name: &str) -> Result<&dyn ChatModel> {
        self.chat.get(name).map(|c| c.as_ref()).ok_or_else(|| anyhow!("no chat model '{name}' in providers.chat"))
    }
}

macro_rules! build {
    ($spec:expr, $role:expr, $cache:expr, $calls:expr, $http:ident, $mock:expr, $dyn:ident) => {{
        let cache = ResponseCache::new($cache);
        let boxed: Box<dyn $dyn> = match $spec {
            ProviderSpec::Http(cfg) => {
                let client = $http::new(cfg.clone()).with_context(|| format!("building {} provider", $role))?;
                Box::new(Resilient::new(client, cfg.retry_policy(), cfg.concurrency))
            }
            ProviderSpec::Mock { model_id, behavior, seed, dim } => $mock(model_id.as_str(), behavior.as_deref(), *seed, *dim)?,
        };
        Box::new(Cached::new(Counted { inner: boxed, calls: $calls.clone() }, cache)) as Box<dyn $dyn>
    }};
}

fn mock_embedder(_id: &str, _b: Option<&str>, seed: u64, dim: Option<usize>) -> Result<Box<dyn Embedder>> {
    Ok(Box::new(HashEmbedder::new(dim.unwrap_or(MOCK_EMBED_DIM), seed)))
}

fn mock_chat(id: &str, behavior: Option<&str>, seed: u64, _dim: Option<usize>) -> Result<Box<dyn ChatModel>> {
    Ok(match behavior.unwrap_or("synthetic") {
        "echo" => Box::new(MockChat::echo(id)),
        "synthetic" | "review" => Box::new(MockChat::synthetic(id, seed)),
        other => return Err(anyhow!("unknown mock chat behavior '{other}' (echo, synthetic)")),
    })
}

fn mock_scorer(id: &str, _b: Option<&str>, _seed: u64, _dim: Option<usize>) -> Result<Box<dyn TokenScorer>> {
    Ok(Box::new(LexiconScorer::new(id)))
}

impl Providers {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let cache_dir = cfg.cache_dir();
        let calls = Arc::new(AtomicUsize::new(0));
        let p = &cfg.providers;
        let embedder = match &p.embedder {
            Some(spec) => Some(build!(spec, "embedder", cache_dir.join("embed"), calls, HttpEmbedder, mock_embedder, Embedder)),
            None => None,
        };
        let mut chat = BTreeMap::new();
        for (name, spec) in &p.chat {
            let dir = cache_dir.join("chat").join(sanitize(name));
            let c = build!(spec, format!("chat '{name}'"), dir, calls, OpenAiChat, mock_chat, ChatModel);
            chat.insert(name.clone(), c);
        }
        let scorer = match &p.scorer {
            Some(spec) => Some(build!(spec, "scorer", cache_dir.join("tokens"), calls, HttpTokenScorer, mock_scorer, TokenScorer)),
            None => None,
        };
        let cross: Option<Box<dyn CrossScorer>> = match (&p.observer, &p.performer) {
            (Some(o), Some(c)) => {
                let o = build!(o, "observer", cache_dir.join("observer"), calls, HttpTokenScorer, mock_scorer, TokenScorer);
                let c = build!(c, "performer", cache_dir.join("performer"), calls, HttpTokenScorer, mock_scorer, TokenScorer);
                Some(Box::new(ScorerPair::new(o, c)))
            }
            (None, None) => None,
            _ => return Err(anyhow!("providers.observer and providers.performer must be configured together")),
        };
        Ok(Self { embedder, chat, scorer, cross, calls })
    }
}

/// File-name-safe form of a model name.
pub fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

//! Content-addressed response cache.
//!
//! Layout: `<dir>/<kind>/<key[..2]>/<key>.json`, where `key` is the SHA-256
//! of the request (kind, model id and payload). Each file holds one JSON
//! record `{kind, model_id, key, response}`. Files are written to a
//! temporary name and renamed into place.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ChatModel, ChatPrompt, CrossScorer, CrossStreams, Embedder, EmbeddingVector, GenerationParams,
    ProviderError, TokenScore, TokenScorer,
};

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord<T> {
    kind: String,
    model_id: String,
    key: String,
    response: T,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key<P: Serialize + ?Sized>(kind: &str, model_id: &str, payload: &P) -> String {
        let body = serde_json::to_vec(&(kind, model_id, payload)).expect("cache payload serializes");
        hex::encode(Sha256::digest(&body))
    }

    fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(kind).join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Result<Option<T>, ProviderError> {
        let path = self.path(kind, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(ProviderError::Cache(format!("{}: {e}", path.display()))),
        };
        let rec: CacheRecord<T> = serde_json::from_slice(&bytes)
            .map_err(|e| ProviderError::Cache(format!("{}: {e}", path.display())))?;
        Ok(Some(rec.response))
    }

    pub fn put<T: Serialize>(&self, kind: &str, model_id: &str, key: &str, response: &T) -> Result<(), ProviderError> {
        let path = self.path(kind, key);
        let parent = path.parent().expect("cache path has a parent");
        let cache_err = |e: std::io::Error| ProviderError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(parent).map_err(cache_err)?;
        let rec = CacheRecord { kind: kind.to_string(), model_id: model_id.to_string(), key: key.to_string(), response };
        let bytes = serde_json::to_vec_pretty(&rec).map_err(|e| ProviderError::Cache(e.to_string()))?;
        let tmp = parent.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, bytes).map_err(cache_err)?;
        fs::rename(&tmp, &path).map_err(cache_err)
    }

    /// Number of cached responses of one kind.
    pub fn count(&self, kind: &str) -> usize {
        walk_json(&self.dir.join(kind))
    }
}

fn walk_json(dir: &Path) -> usize {
    let Ok(entries) = fs::read_dir(dir) else { return 0 };
    entries
        .flatten()
        .map(|e| {
            let p = e.path();
            if p.is_dir() {
                walk_json(&p)
            } else {
                usize::from(p.extension().is_some_and(|x| x == "json"))
            }
        })
        .sum()
}

#[derive(Debug, Default)]
pub struct CacheStats {
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl CacheStats {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }
    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}

/// Wraps a provider with a [`ResponseCache`]. Only successful responses are
/// stored.
pub struct Cached<P> {
    inner: P,
    cache: ResponseCache,
    stats: CacheStats,
}

impl<P> Cached<P> {
    pub fn new(inner: P, cache: ResponseCache) -> Self {
        Self { inner, cache, stats: CacheStats::default() }
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn through<T, Q, F>(&self, kind: &str, model_id: &str, payload: &Q, call: F) -> Result<T, ProviderError>
    where
        T: Serialize + DeserializeOwned,
        Q: Serialize + ?Sized,
        F: FnOnce() -> Result<T, ProviderError>,
    {
        let key = ResponseCache::key(kind, model_id, payload);
        if let Some(hit) = self.cache.get(kind, &key)? {
            self.stats.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit);
        }
        self.stats.misses.fetch_add(1, Ordering::Relaxed);
        let value = call()?;
        self.cache.put(kind, model_id, &key, &value)?;
        Ok(value)
    }
}

impl<P: Embedder> Embedder for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.through("embedding", self.inner.model_id(), text, || self.inner.embed(text))
    }
}

impl<P: ChatModel> ChatModel for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError> {
        self.through("chat", self.inner.model_id(), &(prompt, params), || self.inner.generate(prompt, params))
    }
}

impl<P: TokenScorer> TokenScorer for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
        self.through("tokens", self.inner.model_id(), text, || self.inner.score_tokens(text))
    }
}

impl<P: CrossScorer> CrossScorer for Cached<P> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn cross_streams(&self, text: &str) -> Result<CrossStreams, ProviderError> {
        self.through("cross", self.inner.model_id(), text, || self.inner.cross_streams(text))
    }
}

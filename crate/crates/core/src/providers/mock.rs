//! Deterministic in-process providers for offline runs and tests.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::prompts::EditLevel;

use super::{
    ChatModel, ChatPrompt, Embedder, EmbeddingVector, GenerationParams, ProviderError, TokenScore,
    TokenScorer,
};

/// 64-bit FNV-1a with a seed folded into the offset basis and a final
/// avalanche step. Stable across platforms and releases.
pub fn stable_hash(seed: u64, bytes: &[u8]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(PRIME);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h
}

/// Lower-cased alphanumeric word tokens.
pub fn word_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Hashing-trick bag-of-words embedder: token counts hashed into `dim`
/// buckets, then L2-normalized.
#[derive(Debug)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
    model_id: String,
    calls: AtomicUsize,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, seed, model_id: format!("mock-hash-{dim}-{seed}"), calls: AtomicUsize::new(0) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Pure embedding function, without call accounting.
    pub fn vector(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(ProviderError::EmptyInput);
        }
        let mut tokens = word_tokens(trimmed);
        if tokens.is_empty() {
            // Punctuation-only text still gets a (single-token) vector.
            tokens.push(trimmed.to_string());
        }
        let mut v = vec![0.0f64; self.dim];
        for t in &tokens {
            v[(stable_hash(self.seed, t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        EmbeddingVector::new(v, self.model_id.clone())
    }
}

impl Embedder for HashEmbedder {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.vector(text)
    }
}

type ChatFn = dyn Fn(&ChatPrompt, &GenerationParams) -> Result<String, ProviderError> + Send + Sync;

enum Behavior {
    Canned(String),
    Echo,
    Script(Mutex<VecDeque<Result<String, ProviderError>>>),
    Func(Box<ChatFn>),
}

/// Chat test double.
pub struct MockChat {
    model_id: String,
    behavior: Behavior,
    context_window_tokens: Option<usize>,
    calls: AtomicUsize,
    prompts: Mutex<Vec<ChatPrompt>>,
}

impl MockChat {
    fn with(model_id: &str, behavior: Behavior) -> Self {
        Self {
            model_id: model_id.to_string(),
            behavior,
            context_window_tokens: None,
            calls: AtomicUsize::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Always answers `response`.
    pub fn canned(model_id: &str, response: impl Into<String>) -> Self {
        Self::with(model_id, Behavior::Canned(response.into()))
    }

    /// Answers with the user message unchanged.
    pub fn echo(model_id: &str) -> Self {
        Self::with(model_id, Behavior::Echo)
    }

    /// Answers from `script` in order; the last entry repeats once the
    /// script is exhausted.
    pub fn scripted(model_id: &str, script: Vec<Result<String, ProviderError>>) -> Self {
        assert!(!script.is_empty(), "script needs at least one entry");
        Self::with(model_id, Behavior::Script(Mutex::new(script.into())))
    }

    pub fn from_fn(
        model_id: &str,
        f: impl Fn(&ChatPrompt, &GenerationParams) -> Result<String, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        Self::with(model_id, Behavior::Func(Box::new(f)))
    }

    pub fn with_context_window(mut self, tokens: usize) -> Self {
        self.context_window_tokens = Some(tokens);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn prompts(&self) -> Vec<ChatPrompt> {
        self.prompts.lock().expect("mock poisoned").clone()
    }
}

impl ChatModel for MockChat {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn generate(&self, prompt: &ChatPrompt, params: &GenerationParams) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.prompts.lock().expect("mock poisoned").push(prompt.clone());
        if let Some(limit) = self.context_window_tokens {
            let estimated_tokens = prompt.estimated_tokens();
            if estimated_tokens > limit {
                return Err(ProviderError::ContextOverflow { estimated_tokens, limit });
            }
        }
        match &self.behavior {
            Behavior::Canned(r) => Ok(r.clone()),
            Behavior::Echo => Ok(prompt.user.clone()),
            Behavior::Script(q) => {
                let mut q = q.lock().expect("mock poisoned");
                if q.len() > 1 {
                    q.pop_front().expect("non-empty")
                } else {
                    q.front().cloned().expect("non-empty")
                }
            }
            Behavior::Func(f) => f(prompt, params),
        }
    }
}

/// Whitespace-token scorer with a fixed lexicon; tokens not in the lexicon
/// get hash-derived, valid statistics.
#[derive(Debug)]
pub struct LexiconScorer {
    model_id: String,
    lexicon: HashMap<String, TokenScore>,
    calls: AtomicUsize,
}

impl LexiconScorer {
    pub fn new(model_id: &str) -> Self {
        Self { model_id: model_id.to_string(), lexicon: HashMap::new(), calls: AtomicUsize::new(0) }
    }

    pub fn with_entry(mut self, token: &str, logprob: f64, rank: u64, entropy: f64) -> Self {
        self.lexicon.insert(token.to_string(), TokenScore::new(token, logprob, rank, entropy));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn score_one(&self, token: &str) -> TokenScore {
        if let Some(s) = self.lexicon.get(token) {
            return s.clone();
        }
        let h = stable_hash(0x5eed, token.as_bytes());
        TokenScore::new(
            token,
            -(0.1 + ((h >> 16) % 1000) as f64 / 200.0),
            1 + h % 100,
            ((h >> 32) % 1000) as f64 / 250.0,
        )
    }
}

impl TokenScorer for LexiconScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(text.split_whitespace().map(|t| self.score_one(t)).collect())
    }
}

/// Returns a pre-recorded stream per exact input text.
#[derive(Debug, Default)]
pub struct ScriptedScorer {
    model_id: String,
    scripts: HashMap<String, Vec<TokenScore>>,
}

impl ScriptedScorer {
    pub fn new(model_id: &str) -> Self {
        Self { model_id: model_id.to_string(), scripts: HashMap::new() }
    }

    pub fn with_script(mut self, text: &str, scores: Vec<TokenScore>) -> Self {
        self.scripts.insert(text.to_string(), scores);
        self
    }
}

impl TokenScorer for ScriptedScorer {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn score_tokens(&self, text: &str) -> Result<Vec<TokenScore>, ProviderError> {
        self.scripts
            .get(text)
            .cloned()
            .ok_or_else(|| ProviderError::Malformed(format!("no script for text '{text}'")))
    }
}

/// Share of words a synthetic edit at each level replaces.
pub const SYNTHETIC_EDIT_FRACTIONS: [f64; 4] = [0.05, 0.25, 0.5, 0.85];

const FILLER: [&str; 24] = [
    "notably", "comprehensive", "furthermore", "robust", "novel", "insightful", "meticulous", "compelling",
    "moreover", "nuanced", "rigorous", "additionally", "overall", "demonstrates", "leverages", "intricate",
    "pivotal", "enhances", "underscores", "holistic", "commendable", "elucidate", "thorough", "clarity",
];

/// Deterministic stand-in for an LLM edit: each word position draws one
/// uniform value and is replaced when it falls below the level's fraction,
/// so heavier levels replace a superset of the words lighter levels do.
pub fn synthetic_edit(text: &str, level: EditLevel, seed: u64) -> String {
    let frac = SYNTHETIC_EDIT_FRACTIONS[level.grade() as usize - 1];
    text.split_whitespace()
        .enumerate()
        .map(|(i, w)| {
            let h = stable_hash(seed ^ i as u64, w.as_bytes());
            if (h % 10_000) as f64 / 10_000.0 < frac {
                FILLER[((h >> 20) % FILLER.len() as u64) as usize]
            } else {
                w
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn paper_body(user: &str) -> &str {
    match (user.find("```"), user.rfind("```")) {
        (Some(a), Some(b)) if b > a + 3 => user[a + 3..b].trim(),
        _ => user.trim(),
    }
}

/// Deterministic free-text review assembled from the manuscript's words.
pub fn synthetic_review_text(paper_text: &str) -> String {
    let words: Vec<&str> = paper_text.split_whitespace().collect();
    let span = |a: usize, b: usize| words[a.min(words.len())..b.min(words.len())].join(" ");
    format!(
        "Summary: the paper addresses {}. Strengths: {}. Weaknesses: {}. Overall the contribution is clearly presented.",
        span(0, 40),
        span(40, 60),
        span(60, 80)
    )
}

/// Deterministic review JSON in the ICLR 2022 template shape.
pub fn synthetic_review_json(paper_text: &str, decision: &str) -> String {
    let text = synthetic_review_text(paper_text);
    serde_json::json!({
        "summary_of_the_paper": text,
        "main_review": text,
        "summary_of_the_review": "The paper is clearly presented.",
        "correctness": 3,
        "technical_novelty_and_significance": 3,
        "empirical_novelty_and_significance": 2,
        "flag_for_ethics_review": false,
        "recommendation": decision,
        "confidence": 4
    })
    .to_string()
}

impl MockChat {
    /// Offline chat model answering every pipeline prompt plausibly: edit
    /// prompts get [`synthetic_edit`], JSON requests get
    /// [`synthetic_review_json`] with the requested decision, anything else
    /// gets [`synthetic_review_text`].
    pub fn synthetic(model_id: &str, seed: u64) -> Self {
        Self::from_fn(model_id, move |p, params| {
            if let Some(level) = EditLevel::ALL.into_iter().find(|l| l.prompt() == p.system) {
                return Ok(synthetic_edit(&p.user, level, seed));
            }
            let body = paper_body(&p.user);
            if params.json_mode {
                let decision = p
                    .user
                    .split_once("aligns with a '")
                    .and_then(|(_, rest)| rest.split_once("' decision"))
                    .map_or("marginally above the acceptance threshold", |(d, _)| d);
                return Ok(synthetic_review_json(body, decision));
            }
            Ok(synthetic_review_text(body))
        })
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;

use super::{AnchorError, AnchorReview};
use crate::prompts::{self, ANCHOR_SYSTEM, ANCHOR_USER};
use crate::providers::{self, ChatModel, ChatPrompt, Embedder, GenerationParams, ProviderError};

/// The frozen anchor prompt applied to one manuscript.
pub fn anchor_prompt(paper_text: &str) -> ChatPrompt {
    let user = prompts::render(ANCHOR_USER, &BTreeMap::from([("text", paper_text)]))
        .expect("anchor template has exactly one slot");
    ChatPrompt::new(ANCHOR_SYSTEM, user)
}

/// Hash of the unrendered anchor prompt templates.
pub fn anchor_prompt_hash() -> String {
    prompts::content_hash(&[ANCHOR_SYSTEM, ANCHOR_USER])
}

/// Shortens a manuscript to at most `max_chars` characters by cutting the
/// tail. The head up to the end of the abstract paragraph is kept intact
/// when it fits; otherwise the cut falls on the last paragraph break that
/// still fits, or exactly at `max_chars`.
pub fn truncate_manuscript(text: &str, max_chars: usize) -> String {
    if text.chars().count() <= max_chars {
        return text.to_string();
    }
    let limit = text.char_indices().nth(max_chars).map_or(text.len(), |(i, _)| i);
    let protected = abstract_end(text).unwrap_or(0);
    let cut = match text[..limit].rfind("\n\n") {
        Some(p) if p >= protected && p > 0 => p,
        _ => limit,
    };
    text[..cut].trim_end().to_string()
}

/// Byte offset of the paragraph break after the abstract, if one is found.
fn abstract_end(text: &str) -> Option<usize> {
    let lower = text.to_lowercase();
    // Lower-casing can change byte lengths outside ASCII; only trust the
    // offset when it does not.
    if lower.len() != text.len() {
        return None;
    }
    let start = lower.find("abstract")?;
    let body = start + "abstract".len();
    // Skip the blank line that may follow a heading.
    let rest = &text[body..];
    let skip = rest.len() - rest.trim_start().len();
    text[body + skip..].find("\n\n").map(|p| body + skip + p)
}

/// JSON-per-anchor cache: `<dir>/<paper>/<anchor_llm>.<prompt_hash[..16]>.json`.
#[derive(Debug, Clone)]
pub struct AnchorStore {
    dir: PathBuf,
}

fn safe_component(s: &str) -> String {
    let clean: String = s
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if clean == s && !s.starts_with('.') {
        clean
    } else {
        // Disambiguate names that differ only in replaced characters.
        format!("{clean}~{}", &prompts::content_hash(&[s])[..8])
    }
}

impl AnchorStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, paper_id: &str, anchor_llm: &str, prompt_hash: &str) -> PathBuf {
        let short = &prompt_hash[..prompt_hash.len().min(16)];
        self.dir
            .join(safe_component(paper_id))
            .join(format!("{}.{short}.json", safe_component(anchor_llm)))
    }

    fn err(path: &Path, e: impl std::fmt::Display) -> AnchorError {
        AnchorError::Store { path: path.display().to_string(), detail: e.to_string() }
    }

    pub fn load(&self, paper_id: &str, anchor_llm: &str, prompt_hash: &str) -> Result<Option<AnchorReview>, AnchorError> {
        let path = self.path(paper_id, anchor_llm, prompt_hash);
        match fs::read(&path) {
            Ok(bytes) => {
                let a: AnchorReview = serde_json::from_slice(&bytes).map_err(|e| Self::err(&path, e))?;
                Ok((a.paper_id == paper_id && a.anchor_llm == anchor_llm && a.prompt_hash == prompt_hash).then_some(a))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Self::err(&path, e)),
        }
    }

    pub fn save(&self, anchor: &AnchorReview) -> Result<PathBuf, AnchorError> {
        let path = self.path(&anchor.paper_id, &anchor.anchor_llm, &anchor.prompt_hash);
        let parent = path.parent().expect("store path has a parent");
        fs::create_dir_all(parent).map_err(|e| Self::err(parent, e))?;
        let tmp = path.with_extension(format!("{}.tmp", std::process::id()));
        let bytes = serde_json::to_vec_pretty(anchor).map_err(|e| Self::err(&path, e))?;
        fs::write(&tmp, bytes).map_err(|e| Self::err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Self::err(&path, e))?;
        Ok(path)
    }

    /// Every stored anchor, in path order.
    pub fn load_all(&self) -> Result<Vec<AnchorReview>, AnchorError> {
        let mut files = Vec::new();
        let Ok(papers) = fs::read_dir(&self.dir) else { return Ok(Vec::new()) };
        for paper in papers.flatten() {
            if let Ok(entries) = fs::read_dir(paper.path()) {
                files.extend(
                    entries
                        .flatten()
                        .map(|e| e.path())
                        .filter(|p| p.extension().is_some_and(|x| x == "json")),
                );
            }
        }
        files.sort();
        files
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Self::err(p, e))?;
                serde_json::from_slice(&bytes).map_err(|e| Self::err(p, e))
            })
            .collect()
    }
}

/// Generates, embeds and caches anchor reviews for one anchor LLM.
pub struct AnchorGenerator<'a> {
    chat: &'a dyn ChatModel,
    embedder: &'a dyn Embedder,
    anchor_llm: String,
    store: Option<AnchorStore>,
    params: GenerationParams,
    max_manuscript_chars: Option<usize>,
}

const MAX_TRUNCATIONS: usize = 4;

impl<'a> AnchorGenerator<'a> {
    /// `anchor_llm` names the anchor in detector ids and cache keys.
    pub fn new(anchor_llm: &str, chat: &'a dyn ChatModel, embedder: &'a dyn Embedder) -> Self {
        Self {
            chat,
            embedder,
            anchor_llm: anchor_llm.to_string(),
            store: None,
            params: GenerationParams::default(),
            max_manuscript_chars: None,
        }
    }

    pub fn with_store(mut self, store: AnchorStore) -> Self {
        self.store = Some(store);
        self
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    /// Truncates manuscripts up front instead of waiting for the provider
    /// to reject them.
    pub fn with_max_manuscript_chars(mut self, max: usize) -> Self {
        self.max_manuscript_chars = Some(max);
        self
    }

    pub fn anchor_llm(&self) -> &str {
        &self.anchor_llm
    }

    pub fn generate(&self, paper_id: &str, paper_text: &str) -> Result<AnchorReview, AnchorError> {
        if paper_text.trim().is_empty() {
            return Err(AnchorError::EmptyPaper);
        }
        let prompt_hash = anchor_prompt_hash();
        if let Some(store) = &self.store {
            if let Some(mut cached) = store.load(paper_id, &self.anchor_llm, &prompt_hash)? {
                if cached.embedding.model_id == self.embedder.model_id() {
                    return Ok(cached);
                }
                cached.embedding = providers::embed(self.embedder, &cached.text)?;
                store.save(&cached)?;
                return Ok(cached);
            }
        }
        let text = self.complete(paper_text)?;
        if text.trim().is_empty() {
            return Err(ProviderError::Malformed("anchor model returned empty text".into()).into());
        }
        let anchor = AnchorReview {
            paper_id: paper_id.to_string(),
            anchor_llm: self.anchor_llm.clone(),
            embedding: providers::embed(self.embedder, &text)?,
            text,
            prompt_hash,
            generated_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        if let Some(store) = &self.store {
            store.save(&anchor)?;
        }
        Ok(anchor)
    }

    fn complete(&self, paper_text: &str) -> Result<String, AnchorError> {
        let mut budget = self.max_manuscript_chars.unwrap_or(usize::MAX);
        for _ in 0..=MAX_TRUNCATIONS {
            let manuscript = truncate_manuscript(paper_text, budget);
            let chars = manuscript.chars().count();
            match providers::generate(self.chat, &anchor_prompt(&manuscript), &self.params) {
                Err(ProviderError::ContextOverflow { estimated_tokens, limit }) => {
                    let ratio = if limit > 0 && estimated_tokens > limit {
                        limit as f64 / estimated_tokens as f64 * 0.9
                    } else {
                        0.5
                    };
                    budget = ((chars as f64) * ratio) as usize;
                    log::warn!("paper exceeds context window; truncating manuscript to {budget} chars");
                    if budget == 0 {
                        break;
                    }
                }
                other => return Ok(other?),
            }
        }
        Err(ProviderError::ContextOverflow { estimated_tokens: paper_text.chars().count() / 4, limit: 0 }.into())
    }

    /// Generates anchors for many papers in parallel; concurrency is bounded
    /// by the providers' own limits.
    pub fn generate_all(&self, papers: &[(String, String)]) -> Vec<Result<AnchorReview, AnchorError>> {
        papers.par_iter().map(|(id, text)| self.generate(id, text)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{HashEmbedder, MockChat};

    #[test]
    fn prompt_is_frozen_and_rendered() {
        let p = anchor_prompt("PAPER BODY");
        assert_eq!(p.system, ANCHOR_SYSTEM);
        assert!(p.user.contains("```\nPAPER BODY\n```"));
        assert_eq!(anchor_prompt_hash(), anchor_prompt_hash());
    }

    #[test]
    fn fixed_text_composes_with_embedder() {
        let chat = MockChat::canned("m", "Fixed anchor text");
        let emb = HashEmbedder::new(64, 1);
        let a = AnchorGenerator::new("gpt-4o", &chat, &emb).generate("p1", "paper").unwrap();
        assert_eq!(a.text, "Fixed anchor text");
        assert_eq!(a.embedding, emb.vector("Fixed anchor text").unwrap());
        assert_eq!(a.prompt_hash, anchor_prompt_hash());
    }

    #[test]
    fn warm_store_returns_identical_anchor() {
        let dir = tempfile::tempdir().unwrap();
        let chat = MockChat::canned("m", "anchor");
        let emb = HashEmbedder::new(64, 1);
        let g = AnchorGenerator::new("gpt-4o", &chat, &emb).with_store(AnchorStore::new(dir.path()));
        let a = g.generate("p/1", "paper").unwrap();
        let b = g.generate("p/1", "paper").unwrap();
        assert_eq!(a, b);
        assert_eq!(chat.calls(), 1);
        let other = AnchorGenerator::new("claude", &chat, &emb).with_store(AnchorStore::new(dir.path()));
        let c = other.generate("p/1", "paper").unwrap();
        assert_eq!((c.paper_id.as_str(), c.anchor_llm.as_str()), ("p/1", "claude"));
        assert_eq!(AnchorStore::new(dir.path()).load_all().unwrap().len(), 2);
    }

    #[test]
    fn empty_paper_rejected() {
        let chat = MockChat::canned("m", "x");
        let emb = HashEmbedder::new(8, 1);
        assert!(matches!(AnchorGenerator::new("a", &chat, &emb).generate("p", " \n"), Err(AnchorError::EmptyPaper)));
        assert_eq!(chat.calls(), 0);
    }

    #[test]
    fn truncation_keeps_head() {
        let text = "Title\n\nAbstract\n\nWe study things.\n\nIntro para one.\n\nMore body text here.";
        assert_eq!(truncate_manuscript(text, 1000), text);
        let t = truncate_manuscript(text, 50);
        assert!(t.starts_with("Title\n\nAbstract\n\nWe study things."));
        assert!(t.chars().count() <= 50);
        assert!(!t.contains("More body"));
        // Budget smaller than the abstract: hard cut.
        assert_eq!(truncate_manuscript(text, 8), "Title\n\nA");
    }

    #[test]
    fn overflow_triggers_truncation() {
        let chat = MockChat::canned("m", "anchor").with_context_window(300);
        let emb = HashEmbedder::new(8, 1);
        let paper = format!("Title\n\nAbstract\n\nShort abstract.\n\n{}", "body words here. ".repeat(400));
        let a = AnchorGenerator::new("a", &chat, &emb).generate("p", &paper).unwrap();
        assert_eq!(a.text, "anchor");
        let prompts = chat.prompts();
        assert!(prompts.len() >= 2);
        assert!(prompts.last().unwrap().user.contains("Short abstract."));
    }
}

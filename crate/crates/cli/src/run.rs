//! Shared run state: configuration, corpus access, provenance and the run
//! manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use revdetect::corpus::{load_dataset, Corpus, LoadFilter, LoadOptions, SchemaRegistry, Subset};
use revdetect::prompts::{self, EditLevel};

use crate::config::RunConfig;
use crate::wiring::Providers;

/// Where every artifact came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub prompt_hashes: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_fingerprint: Option<String>,
}

pub fn prompt_hashes() -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("anchor".to_string(), revdetect::anchor::anchor_prompt_hash());
    m.insert("review".to_string(), prompts::content_hash(&[prompts::REVIEW_SYSTEM, prompts::REVIEW_USER]));
    m.insert("archetype".to_string(), prompts::content_hash(&[prompts::ARCHETYPE_SYSTEM, prompts::ANCHOR_USER]));
    for l in EditLevel::ALL {
        m.insert(format!("edit_{l}"), prompts::content_hash(&[l.prompt()]));
    }
    m
}

/// Outcome of one command, recorded in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_fingerprint: Option<String>,
    pub provider_calls: usize,
    pub hard_errors: usize,
    pub soft_errors: usize,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub prompt_hashes: BTreeMap<String, String>,
    /// Latest record per command.
    pub commands: BTreeMap<String, CommandRecord>,
}

pub struct Run {
    pub cfg: RunConfig,
    pub config_hash: String,
    pub schemas: SchemaRegistry,
}

impl Run {
    pub fn new(cfg: RunConfig, config_hash: String) -> Result<Self> {
        let schemas = match &cfg.schemas {
            Some(p) => SchemaRegistry::from_path(p)?,
            None => SchemaRegistry::bundled(),
        };
        std::fs::create_dir_all(&cfg.output_dir)
            .with_context(|| format!("creating output dir {}", cfg.output_dir.display()))?;
        Ok(Self { cfg, config_hash, schemas })
    }

    /// Builds the provider stacks; only commands that call models need them,
    /// so credentials are checked here rather than at startup.
    pub fn build_providers(&self) -> Result<Providers> {
        Providers::build(&self.cfg)
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.cfg.output_dir.join(rel)
    }

    pub fn provenance(&self, corpus: Option<&Corpus>) -> Provenance {
        Provenance {
            config_hash: self.config_hash.clone(),
            seed: self.cfg.seed,
            prompt_hashes: prompt_hashes(),
            corpus_fingerprint: corpus.map(Corpus::fingerprint),
        }
    }

    pub fn load_corpus(&self, subset: Option<Subset>) -> Result<Corpus> {
        let filter = LoadFilter { subset, ..LoadFilter::default() };
        let (corpus, report) = load_dataset(&self.cfg.dataset_root, &filter, &LoadOptions::default(), &self.schemas)
            .with_context(|| format!("loading dataset from {}", self.cfg.dataset_root.display()))?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        Ok(corpus)
    }

    /// Manuscript text of `paper_id` from the papers directory.
    pub fn paper_text(&self, paper_id: &str) -> Result<String> {
        let dir = self.cfg.papers_dir.as_ref().context("papers_dir is not configured")?;
        for ext in ["txt", "md"] {
            let p = dir.join(format!("{paper_id}.{ext}"));
            if p.is_file() {
                return std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()));
            }
        }
        anyhow::bail!("no manuscript for paper '{paper_id}' in {}", dir.display())
    }

    /// Every `(paper_id, text)` in the papers directory, sorted by id.
    pub fn all_papers(&self) -> Result<Vec<(String, String)>> {
        let dir = self.cfg.papers_dir.as_ref().context("papers_dir is not configured")?;
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
            let p = e?.path();
            let ext = p.extension().and_then(|e| e.to_str());
            if matches!(ext, Some("txt") | Some("md")) {
                let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
                out.push((id, std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?));
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn record(&self, rec: CommandRecord) -> Result<()> {
        let path = self.out("manifest.json");
        let mut m: Manifest = match std::fs::read(&path) {
            Ok(b) => serde_json::from_slice(&b).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        m.config_hash = self.config_hash.clone();
        m.seed = self.cfg.seed;
        m.prompt_hashes = prompt_hashes();
        m.commands.insert(rec.command.clone(), rec);
        write_json(&path, &m)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn rel(run: &Run, p: &Path) -> String {
    p.strip_prefix(&run.cfg.output_dir).unwrap_or(p).display().to_string()
}

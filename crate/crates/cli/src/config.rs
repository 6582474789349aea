//! Run configuration: a TOML file with `${VAR}` environment interpolation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use regex::Regex;
use serde::{Deserialize, Serialize};

use revdetect::anchor::DEFAULT_ANCHOR_LLMS;
use revdetect::calibration::CalibrationFilter;
use revdetect::evaluation::DEFAULT_RESAMPLES;
use revdetect::providers::ProviderConfig;

pub const DEFAULT_TARGETS: [f64; 3] = [0.001, 0.005, 0.01];

/// How one model is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    /// OpenAI-compatible HTTP endpoint (chat or embeddings) or a token
    /// scoring endpoint, depending on the role it fills.
    Http(ProviderConfig),
    /// Offline deterministic stand-in.
    Mock {
        #[serde(default = "default_mock_id")]
        model_id: String,
        /// Chat behaviour: `synthetic` (default) or `echo`.
        #[serde(default)]
        behavior: Option<String>,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        dim: Option<usize>,
    },
}

fn default_mock_id() -> String {
    "mock".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersConfig {
    #[serde(default)]
    pub embedder: Option<ProviderSpec>,
    /// Chat models keyed by name (anchor LLMs and generation LLMs).
    #[serde(default)]
    pub chat: BTreeMap<String, ProviderSpec>,
    #[serde(default)]
    pub scorer: Option<ProviderSpec>,
    /// Observer and performer scorers for the perplexity-ratio detector.
    #[serde(default)]
    pub observer: Option<ProviderSpec>,
    #[serde(default)]
    pub performer: Option<ProviderSpec>,
    /// Directory for response caches; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    /// Key into `providers.chat`.
    pub llm: String,
    /// Dataset name written into the corpus (e.g. `gpt4o`).
    #[serde(default)]
    pub dataset_llm: Option<String>,
    #[serde(default)]
    pub asset_dir: Option<PathBuf>,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_attempts() -> usize {
    revdetect::genpipe::DEFAULT_MAX_ATTEMPTS
}
fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    /// Manuscript texts as `<paper_id>.txt` or `<paper_id>.md`.
    #[serde(default)]
    pub papers_dir: Option<PathBuf>,
    #[serde(default)]
    pub schemas: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_targets")]
    pub targets: Vec<f64>,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Metric detector ids plus `anchor` for the anchor detectors.
    #[serde(default = "default_detectors")]
    pub detectors: Vec<String>,
    #[serde(default = "default_anchor_llms")]
    pub anchor_llms: Vec<String>,
    #[serde(default = "default_min_tokens")]
    pub min_tokens: usize,
    #[serde(default)]
    pub max_manuscript_chars: Option<usize>,
    #[serde(default = "CalibrationFilter::out_of_domain")]
    pub calibration: CalibrationFilter,
    #[serde(default)]
    pub providers: ProvidersConfig,
    #[serde(default)]
    pub generation: Option<GenerationConfig>,
}

fn default_targets() -> Vec<f64> {
    DEFAULT_TARGETS.to_vec()
}
fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}
fn default_detectors() -> Vec<String> {
    vec!["anchor".into()]
}
fn default_anchor_llms() -> Vec<String> {
    DEFAULT_ANCHOR_LLMS.iter().map(|s| s.to_string()).collect()
}
fn default_min_tokens() -> usize {
    revdetect::providers::DEFAULT_MIN_TOKENS
}

/// Replaces `${VAR}` with the variable's value; `$${` escapes a literal `${`.
pub fn interpolate_env(text: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String> {
    let re = Regex::new(r"\$?\$\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex");
    let mut missing = Vec::new();
    let out = re.replace_all(text, |c: &regex::Captures| {
        if c[0].starts_with("$$") {
            return c[0][1..].to_string();
        }
        lookup(&c[1]).unwrap_or_else(|| {
            missing.push(c[1].to_string());
            String::new()
        })
    });
    if !missing.is_empty() {
        bail!("config references unset environment variable(s): {}", missing.join(", "));
    }
    Ok(out.into_owned())
}

/// Loaded configuration plus the hash of the file as written (before
/// interpolation, so secrets never enter the hash).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    /// Directory relative paths in the file are resolved against.
    pub base: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = interpolate_env(&raw, |v| std::env::var(v).ok())?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, hash: revdetect::prompts::content_hash(&[&raw]), base })
    }

    /// Sorts targets and checks ranges.
    pub fn normalize(&mut self) -> Result<()> {
        if self.targets.is_empty() {
            bail!("at least one target FPR is required");
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            bail!("target FPR {t} is outside (0, 1)");
        }
        self.targets.sort_by(f64::total_cmp);
        self.targets.dedup();
        if self.bootstrap_resamples < 2 {
            bail!("bootstrap_resamples must be at least 2");
        }
        if self.anchor_llms.iter().any(|a| a.trim().is_empty()) {
            bail!("empty anchor LLM name");
        }
        Ok(())
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset_root);
        fix(&mut self.output_dir);
        for p in [&mut self.papers_dir, &mut self.schemas, &mut self.providers.cache_dir].into_iter().flatten() {
            fix(p);
        }
        if let Some(g) = &mut self.generation {
            if let Some(p) = &mut g.asset_dir {
                fix(p);
            }
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.providers.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }
}

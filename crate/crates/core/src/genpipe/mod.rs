//! Review generation: decision-aligned reviews, archetype-prompted reviews
//! and AI-edited variants of human reviews, plus a resumable batch runner.

mod batch;
mod parse;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use batch::{run_batch, BatchOptions, BatchReport, GenerationJob, JobOutput, JobSpec, JobStatus, Ledger, LedgerEntry};
pub use parse::{extract_json_object, fields_from_json};

use crate::corpus::{validate_record, CorpusError, ReviewRecord, SchemaRegistry, Source, Subset, TemplateSchema};
use crate::prompts::{self, Archetype, EditLevel, PromptError};
use crate::providers::{self, ChatModel, ChatPrompt, GenerationParams, ProviderError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("no template schema or prompt assets for {conference}{year}")]
    UnknownConferenceYear { conference: String, year: u16 },
    #[error("'{decision}' is not a valid {schema} recommendation")]
    InvalidDecision { decision: String, schema: String },
    #[error("output was not a usable JSON review after {attempts} attempt(s): {detail}")]
    MalformedOutput { attempts: usize, detail: String },
    #[error("output did not match the review template after {attempts} attempt(s): {detail}")]
    SchemaViolation { attempts: usize, detail: String },
    #[error("response blocked by the provider's safety filter")]
    SafetyFiltered,
    #[error("edit output is empty")]
    EmptyEdit,
    #[error(transparent)]
    Provider(ProviderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl From<ProviderError> for GenError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::SafetyFiltered => GenError::SafetyFiltered,
            other => GenError::Provider(other),
        }
    }
}

impl GenError {
    /// Short failure category for batch reports.
    pub fn reason(&self) -> &'static str {
        match self {
            GenError::UnknownConferenceYear { .. } => "unknown_conference_year",
            GenError::InvalidDecision { .. } => "invalid_decision",
            GenError::MalformedOutput { .. } => "malformed_output",
            GenError::SchemaViolation { .. } => "schema_violation",
            GenError::SafetyFiltered => "safety_filtered",
            GenError::EmptyEdit => "empty_edit",
            GenError::Provider(ProviderError::ContextOverflow { .. }) => "context_overflow",
            GenError::Provider(_) => "provider_error",
            GenError::Prompt(_) => "prompt_error",
        }
    }
}

/// Reviewer guideline and response template of one conference-year.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateAssets {
    pub guideline: String,
    pub template: String,
}

/// Guideline and template texts keyed by (conference, year). Only ICLR 2022
/// is bundled; other years are read from operator-supplied files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AssetRegistry {
    assets: BTreeMap<(String, u16), TemplateAssets>,
}

impl AssetRegistry {
    pub fn bundled() -> Self {
        let mut r = Self::default();
        r.insert(
            "ICLR",
            2022,
            TemplateAssets {
                guideline: prompts::ICLR2022_GUIDELINE.to_string(),
                template: prompts::ICLR2022_TEMPLATE.to_string(),
            },
        );
        r
    }

    pub fn insert(&mut self, conference: &str, year: u16, assets: TemplateAssets) {
        self.assets.insert((conference.to_string(), year), assets);
    }

    pub fn get(&self, conference: &str, year: u16) -> Option<&TemplateAssets> {
        self.assets.get(&(conference.to_string(), year))
    }

    /// Adds every `<Conf><Year>.guideline.md` / `<Conf><Year>.template.md`
    /// pair found in `dir`.
    pub fn load_dir(&mut self, dir: &Path) -> Result<usize, CorpusError> {
        let re = regex::Regex::new(r"^([A-Za-z]+)(\d{4})\.guideline\.md$").expect("static regex");
        let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::Io { path: dir.display().to_string(), source: e })?;
        let mut added = 0;
        let mut names: Vec<String> = entries.flatten().filter_map(|e| e.file_name().into_string().ok()).collect();
        names.sort();
        for name in names {
            let Some(c) = re.captures(&name) else { continue };
            let (conference, year) = (c[1].to_string(), c[2].parse::<u16>().expect("four digits"));
            let read = |p: &Path| {
                std::fs::read_to_string(p).map_err(|e| CorpusError::Io { path: p.display().to_string(), source: e })
            };
            let guideline = read(&dir.join(&name))?;
            let template = read(&dir.join(format!("{conference}{year}.template.md")))?;
            self.insert(&conference, year, TemplateAssets { guideline, template });
            added += 1;
        }
        Ok(added)
    }
}

/// Fully rendered prompt plus what it was built for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub conference: String,
    pub year: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<Archetype>,
    pub prompt: ChatPrompt,
    /// Hash of the rendered system and user messages.
    pub prompt_hash: String,
}

fn lookup<'a>(
    assets: &'a AssetRegistry,
    schemas: &'a SchemaRegistry,
    conference: &str,
    year: u16,
) -> Result<(&'a TemplateAssets, &'a TemplateSchema), GenError> {
    match (assets.get(conference, year), schemas.get(conference, year)) {
        (Some(a), Some(s)) => Ok((a, s)),
        _ => Err(GenError::UnknownConferenceYear { conference: conference.to_string(), year }),
    }
}

fn bundle(conference: &str, year: u16, system: String, user: String) -> PromptBundle {
    let prompt_hash = prompts::content_hash(&[&system, &user]);
    PromptBundle {
        conference: conference.to_string(),
        year,
        decision: None,
        archetype: None,
        prompt: ChatPrompt::new(system, user),
        prompt_hash,
    }
}

/// Decision-aligned review prompt for one paper.
pub fn build_review_prompt(
    assets: &AssetRegistry,
    schemas: &SchemaRegistry,
    paper_text: &str,
    conference: &str,
    year: u16,
    decision: &str,
) -> Result<PromptBundle, GenError> {
    let (a, schema) = lookup(assets, schemas, conference, year)?;
    if !schema.is_valid_decision(decision) {
        return Err(GenError::InvalidDecision { decision: decision.to_string(), schema: schema.key() });
    }
    let system = prompts::render(
        prompts::REVIEW_SYSTEM,
        &BTreeMap::from([("reviewer_guideline", a.guideline.as_str()), ("review_template", a.template.as_str())]),
    )?;
    let user = prompts::render(
        prompts::REVIEW_USER,
        &BTreeMap::from([("human_reviewer_decision", decision), ("text", paper_text)]),
    )?;
    let mut b = bundle(conference, year, system, user);
    b.decision = Some(decision.to_string());
    Ok(b)
}

/// Archetype-persona review prompt for one paper. The user message asks for
/// a review of the paper without prescribing a decision.
pub fn build_archetype_prompt(
    assets: &AssetRegistry,
    schemas: &SchemaRegistry,
    paper_text: &str,
    conference: &str,
    year: u16,
    archetype: Archetype,
) -> Result<PromptBundle, GenError> {
    let (a, _) = lookup(assets, schemas, conference, year)?;
    let system = prompts::render(
        prompts::ARCHETYPE_SYSTEM,
        &BTreeMap::from([
            ("archetype_persona", archetype.persona()),
            ("reviewer_guideline", a.guideline.as_str()),
            ("review_template", a.template.as_str()),
        ]),
    )?;
    let user = prompts::render(prompts::ANCHOR_USER, &BTreeMap::from([("text", paper_text)]))?;
    let mut b = bundle(conference, year, system, user);
    b.archetype = Some(archetype);
    Ok(b)
}

/// Identity of the record a generation produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub review_id: String,
    pub paper_id: String,
    pub subset: Subset,
}

fn decisions_match(schema: &TemplateSchema, wanted: &str, got: &str) -> bool {
    if schema.decision_vocabulary.is_some() {
        return wanted.trim().eq_ignore_ascii_case(got.trim());
    }
    let num = |s: &str| crate::corpus::parse_leading_number(s);
    match (num(wanted), num(got)) {
        (Some(a), Some(b)) => a == b,
        _ => wanted.trim() == got.trim(),
    }
}

/// Chat model plus the registries and settings used for every generation.
pub struct Generator<'a> {
    chat: &'a dyn ChatModel,
    llm: String,
    assets: &'a AssetRegistry,
    schemas: &'a SchemaRegistry,
    params: GenerationParams,
    max_attempts: usize,
}

pub const DEFAULT_MAX_ATTEMPTS: usize = 3;

impl<'a> Generator<'a> {
    /// `llm` is the dataset name of the model, e.g. `gpt4o`.
    pub fn new(llm: &str, chat: &'a dyn ChatModel, assets: &'a AssetRegistry, schemas: &'a SchemaRegistry) -> Self {
        Self {
            chat,
            llm: llm.to_string(),
            assets,
            schemas,
            params: GenerationParams { json_mode: true, ..GenerationParams::default() },
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn with_params(mut self, params: GenerationParams) -> Self {
        self.params = params;
        self
    }

    pub fn with_max_attempts(mut self, n: usize) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    pub fn llm(&self) -> &str {
        &self.llm
    }

    pub fn assets(&self) -> &AssetRegistry {
        self.assets
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        self.schemas
    }

    /// Sends the bundle and turns the reply into a validated record.
    /// Unparseable or template-violating replies are retried with a fresh
    /// nonce, up to the attempt limit.
    pub fn generate_review(&self, b: &PromptBundle, meta: &RecordMeta) -> Result<ReviewRecord, GenError> {
        let schema = self
            .schemas
            .get(&b.conference, b.year)
            .ok_or_else(|| GenError::UnknownConferenceYear { conference: b.conference.clone(), year: b.year })?;
        let mut last = None;
        for attempt in 0..self.max_attempts {
            let params = GenerationParams { nonce: self.params.nonce + attempt as u32, ..self.params.clone() };
            let reply = providers::generate(self.chat, &b.prompt, &params)?;
            match self.record_from_reply(&reply, b, schema, meta) {
                Ok(r) => return Ok(r),
                Err(e) => {
                    log::warn!("{}: attempt {} rejected: {e}", meta.review_id, attempt + 1);
                    last = Some(e);
                }
            }
        }
        let attempts = self.max_attempts;
        Err(match last.expect("at least one attempt") {
            Rejection::Malformed(detail) => GenError::MalformedOutput { attempts, detail },
            Rejection::Schema(detail) => GenError::SchemaViolation { attempts, detail },
        })
    }

    fn record_from_reply(
        &self,
        reply: &str,
        b: &PromptBundle,
        schema: &TemplateSchema,
        meta: &RecordMeta,
    ) -> Result<ReviewRecord, Rejection> {
        let obj = extract_json_object(reply).map_err(Rejection::Malformed)?;
        let fields = fields_from_json(&obj, schema).map_err(Rejection::Malformed)?;
        let mut record = ReviewRecord {
            review_id: meta.review_id.clone(),
            paper_id: meta.paper_id.clone(),
            conference: b.conference.clone(),
            year: b.year,
            subset: meta.subset,
            source: Source::Llm(self.llm.clone()),
            dataset_llm: self.llm.clone(),
            recommendation: None,
            fields,
            archetype: b.archetype.map(|a| a.as_str().to_string()),
            prompt_hash: Some(b.prompt_hash.clone()),
        };
        let report = validate_record(&record, schema);
        if !report.is_valid() {
            return Err(Rejection::Schema(
                serde_json::to_string(&report).unwrap_or_else(|_| "invalid record".into()),
            ));
        }
        let got = schema
            .recommendation_field
            .as_ref()
            .and_then(|f| record.fields.get(f))
            .map(|v| v.render().trim().to_string());
        if let Some(got) = &got {
            if !schema.is_valid_decision(got) {
                return Err(Rejection::Schema(format!("recommendation '{got}' outside the {} vocabulary", schema.key())));
            }
        }
        record.recommendation = match (&b.decision, got) {
            (Some(wanted), Some(got)) if !decisions_match(schema, wanted, &got) => {
                return Err(Rejection::Schema(format!("recommendation '{got}' differs from requested '{wanted}'")));
            }
            // Store the requested string so the review pairs with its human counterpart.
            (Some(wanted), Some(_)) => Some(wanted.clone()),
            (_, got) => got,
        };
        Ok(record)
    }

    /// Builds the decision-aligned prompt and generates one review.
    pub fn review(
        &self,
        paper_text: &str,
        conference: &str,
        year: u16,
        decision: &str,
        meta: &RecordMeta,
    ) -> Result<ReviewRecord, GenError> {
        let b = build_review_prompt(self.assets, self.schemas, paper_text, conference, year, decision)?;
        self.generate_review(&b, meta)
    }

    pub fn archetype_review(
        &self,
        paper_text: &str,
        conference: &str,
        year: u16,
        archetype: Archetype,
        meta: &RecordMeta,
    ) -> Result<ReviewRecord, GenError> {
        let b = build_archetype_prompt(self.assets, self.schemas, paper_text, conference, year, archetype)?;
        self.generate_review(&b, meta)
    }

    /// Asks the model to edit `human_text` at `level`; the edit instruction is
    /// the system message and the review is the user message, verbatim.
    pub fn edit_review(&self, human_text: &str, level: EditLevel) -> Result<String, GenError> {
        let prompt = ChatPrompt::new(level.prompt(), human_text);
        let params = GenerationParams { json_mode: false, ..self.params.clone() };
        let out = providers::generate(self.chat, &prompt, &params)?;
        if out.trim().is_empty() {
            return Err(GenError::EmptyEdit);
        }
        Ok(out)
    }

    /// Runs one batch job.
    pub fn execute(&self, job: &GenerationJob) -> Result<JobOutput, GenError> {
        match &job.spec {
            JobSpec::Review { paper_id, conference, year, subset, decision } => {
                let meta = RecordMeta { review_id: job.job_id.clone(), paper_id: paper_id.clone(), subset: *subset };
                self.review(&job.input, conference, *year, decision, &meta).map(JobOutput::Review)
            }
            JobSpec::Archetype { paper_id, conference, year, subset, archetype } => {
                let meta = RecordMeta { review_id: job.job_id.clone(), paper_id: paper_id.clone(), subset: *subset };
                self.archetype_review(&job.input, conference, *year, *archetype, &meta).map(JobOutput::Review)
            }
            JobSpec::Edit { review_id, level } => self
                .edit_review(&job.input, *level)
                .map(|text| JobOutput::Edit { review_id: review_id.clone(), level: *level, text }),
        }
    }
}

enum Rejection {
    Malformed(String),
    Schema(String),
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rejection::Malformed(d) => write!(f, "malformed: {d}"),
            Rejection::Schema(d) => write!(f, "schema: {d}"),
        }
    }
}

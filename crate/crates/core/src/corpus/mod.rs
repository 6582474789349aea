//! Peer-review corpora: records, the per-(conference, year) template
//! registry, CSV ingestion in the published dataset layout, validation,
//! canonical serialization and human/AI pairing.

mod loader;
mod pairing;
mod schema;
mod validate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use loader::{
    load_dataset, parse_file_name, write_dataset, DatasetFileName, FileCount, LoadFilter,
    LoadOptions, LoadReport,
};
pub use pairing::{pair_reviews, PairedReview, PairingReport};
pub use schema::{NumericRange, SchemaRegistry, TemplateSchema};
pub(crate) use schema::{normalize_field_name, parse_leading_number};
pub use validate::{validate_record, OutOfRange, ValidationReport};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {detail}")]
    Row { file: String, line: u64, detail: String },
    #[error("{file}: {detail}")]
    File { file: String, detail: String },
    #[error("unrecognized dataset file name '{0}'")]
    UnknownFileName(String),
    #[error("no template schema registered for {conference}{year}")]
    UnknownSchema { conference: String, year: u16 },
    #[error("schema registry: {0}")]
    Registry(String),
    #[error("review '{0}' has no non-empty textual field")]
    EmptyReview(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Dataset split, as in the directory names of the published layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    Calibration,
    Test,
    Extended,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Calibration, Subset::Test, Subset::Extended];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Calibration => "calibration",
            Subset::Test => "test",
            Subset::Extended => "extended",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "calibration" => Ok(Subset::Calibration),
            "test" => Ok(Subset::Test),
            "extended" => Ok(Subset::Extended),
            other => Err(format!("unknown subset '{other}'")),
        }
    }
}

/// Who wrote a review.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Llm(String),
}

impl Source {
    pub fn is_human(&self) -> bool {
        matches!(self, Source::Human)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Human => f.write_str("human"),
            Source::Llm(name) => f.write_str(name),
        }
    }
}

impl FromStr for Source {
    type Err = String;

    /// `"human"` is a human review, any other non-empty string names an LLM.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            Err("empty source".into())
        } else if s.eq_ignore_ascii_case("human") {
            Ok(Source::Human)
        } else {
            Ok(Source::Llm(s.to_string()))
        }
    }
}

/// Value of one template field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Number(f64),
    Text(String),
}

impl FieldValue {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            FieldValue::Text(t) => Some(t),
            FieldValue::Number(_) => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            FieldValue::Number(n) => Some(*n),
            FieldValue::Text(_) => None,
        }
    }

    /// String form used in CSV cells and for recommendation matching.
    pub fn render(&self) -> String {
        match self {
            FieldValue::Text(t) => t.clone(),
            FieldValue::Number(n) if n.fract() == 0.0 && n.abs() < 1e15 => format!("{}", *n as i64),
            FieldValue::Number(n) => format!("{n}"),
        }
    }
}

/// One peer review, human or AI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub review_id: String,
    pub paper_id: String,
    pub conference: String,
    pub year: u16,
    pub subset: Subset,
    pub source: Source,
    /// LLM named in the file this record belongs to. Human reviews live in
    /// the same files as the AI reviews generated for their papers.
    pub dataset_llm: String,
    /// Template fields in schema order.
    pub fields: IndexMap<String, FieldValue>,
    pub recommendation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archetype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
}

/// Canonical names of the numeric score categories and the template field
/// names that carry them across years.
const SCORE_ALIASES: &[(&str, &[&str])] = &[
    ("soundness", &["soundness"]),
    ("presentation", &["presentation"]),
    ("contribution", &["contribution"]),
    ("confidence", &["confidence", "confidence score"]),
    ("rating", &["rating", "overall score"]),
];

impl ReviewRecord {
    pub fn schema_key(&self) -> (String, u16) {
        (self.conference.clone(), self.year)
    }

    /// Numeric scores present on this record, keyed by canonical category
    /// (`soundness`, `presentation`, `contribution`, `confidence`, `rating`).
    pub fn numeric_scores(&self) -> BTreeMap<&'static str, i64> {
        let mut out = BTreeMap::new();
        for (category, aliases) in SCORE_ALIASES {
            for alias in *aliases {
                if let Some(FieldValue::Number(n)) = self.fields.get(*alias) {
                    out.insert(*category, n.round() as i64);
                    break;
                }
            }
        }
        out
    }

    pub fn numeric_score(&self, category: &str) -> Option<i64> {
        self.numeric_scores()
            .into_iter()
            .find(|(k, _)| *k == category)
            .map(|(_, v)| v)
    }

    /// Reviews from conferences held after ChatGPT's release (2023 onwards)
    /// may contain LLM-assisted "human" text.
    pub fn is_post_chatgpt(&self) -> bool {
        self.year >= 2023
    }
}

/// Which textual fields feed the canonical detector input.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSelection {
    #[default]
    AllText,
    Only(Vec<String>),
}

/// Deterministic single-string form of a review for detectors: every
/// textual field in schema order as `"<field name>:\n<value>"`, joined by a
/// blank line. Numeric fields are left out.
pub fn canonical_text(record: &ReviewRecord) -> Result<String, CorpusError> {
    canonical_text_with(record, &FieldSelection::AllText)
}

pub fn canonical_text_with(
    record: &ReviewRecord,
    selection: &FieldSelection,
) -> Result<String, CorpusError> {
    let parts: Vec<(&str, &str)> = record
        .fields
        .iter()
        .filter_map(|(name, value)| value.as_text().map(|t| (name.as_str(), t)))
        .filter(|(name, _)| match selection {
            FieldSelection::AllText => true,
            FieldSelection::Only(names) => names.iter().any(|n| n == name),
        })
        .collect();
    if parts.iter().all(|(_, t)| t.trim().is_empty()) {
        return Err(CorpusError::EmptyReview(record.review_id.clone()));
    }
    Ok(parts
        .iter()
        .map(|(name, text)| format!("{name}:\n{text}"))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

/// A loaded set of reviews.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<ReviewRecord>,
}

impl Corpus {
    pub fn new(records: Vec<ReviewRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn humans(&self) -> impl Iterator<Item = &ReviewRecord> {
        self.records.iter().filter(|r| r.source.is_human())
    }

    pub fn ai(&self) -> impl Iterator<Item = &ReviewRecord> {
        self.records.iter().filter(|r| !r.source.is_human())
    }

    pub fn filtered(&self, mut keep: impl FnMut(&ReviewRecord) -> bool) -> Corpus {
        Corpus { records: self.records.iter().filter(|r| keep(r)).cloned().collect() }
    }

    /// Order-independent content hash of the corpus (sorted per-record digests).
    pub fn fingerprint(&self) -> String {
        let mut digests: Vec<[u8; 32]> = self
            .records
            .iter()
            .map(|r| {
                let bytes = serde_json::to_vec(r).expect("records serialize");
                Sha256::digest(&bytes).into()
            })
            .collect();
        digests.sort_unstable();
        let mut h = Sha256::new();
        for d in &digests {
            h.update(d);
        }
        hex::encode(h.finalize())
    }
}

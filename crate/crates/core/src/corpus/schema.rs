use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::CorpusError;

const BUNDLED_REGISTRY: &str = include_str!("../../assets/schemas.json");

/// Inclusive numeric range of a template score field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericRange {
    pub min: i64,
    pub max: i64,
    /// Sentinel accepted in place of a score (ICLR2022 uses -999).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_applicable: Option<i64>,
}

impl NumericRange {
    pub fn contains(&self, v: f64) -> bool {
        if let Some(na) = self.not_applicable {
            if v == na as f64 {
                return true;
            }
        }
        v >= self.min as f64 && v <= self.max as f64
    }
}

/// Required review-form fields of one conference-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSchema {
    pub conference: String,
    pub year: u16,
    pub field_names: Vec<String>,
    #[serde(default)]
    pub numeric_field_ranges: BTreeMap<String, NumericRange>,
    /// Field whose value is the reviewer's overall recommendation.
    #[serde(default)]
    pub recommendation_field: Option<String>,
    /// Allowed recommendation strings, when the recommendation is categorical.
    #[serde(default)]
    pub decision_vocabulary: Option<Vec<String>>,
}

impl TemplateSchema {
    pub fn key(&self) -> String {
        format!("{}{}", self.conference, self.year)
    }

    pub fn is_numeric(&self, field: &str) -> bool {
        self.numeric_field_ranges.contains_key(field)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.field_names.is_empty() {
            return Err(format!("{}: empty field list", self.key()));
        }
        for (name, r) in &self.numeric_field_ranges {
            if r.min > r.max {
                return Err(format!("{}: range of '{name}' has min > max", self.key()));
            }
            if !self.field_names.contains(name) {
                return Err(format!("{}: numeric field '{name}' is not a template field", self.key()));
            }
        }
        if let Some(rec) = &self.recommendation_field {
            if !self.field_names.contains(rec) {
                return Err(format!("{}: recommendation field '{rec}' is not a template field", self.key()));
            }
        }
        Ok(())
    }

    /// Whether `decision` is a legal recommendation for this conference-year.
    pub fn is_valid_decision(&self, decision: &str) -> bool {
        if decision.trim().is_empty() {
            return false;
        }
        if let Some(vocab) = &self.decision_vocabulary {
            return vocab.iter().any(|v| v == decision);
        }
        match self
            .recommendation_field
            .as_ref()
            .and_then(|f| self.numeric_field_ranges.get(f))
        {
            Some(range) => parse_leading_number(decision).is_some_and(|v| range.contains(v)),
            None => true,
        }
    }
}

/// Parses the leading number of a cell such as `"6: marginally above"`.
pub(crate) fn parse_leading_number(raw: &str) -> Option<f64> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^\s*(-?\d+(?:\.\d+)?)").expect("static regex"));
    re.captures(raw).and_then(|c| c[1].parse().ok())
}

/// Lower-cases, trims, and maps `_` to spaces so that CSV headers and JSON
/// keys (`summary_of_the_paper`) meet template names (`summary of the paper`).
pub(crate) fn normalize_field_name(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RegistryFile {
    version: String,
    schemas: Vec<TemplateSchema>,
}

/// Template schemas keyed by (conference, year).
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaRegistry {
    pub version: String,
    schemas: BTreeMap<(String, u16), TemplateSchema>,
}

impl SchemaRegistry {
    /// The registry shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_REGISTRY).expect("bundled schema registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let file: RegistryFile =
            serde_json::from_str(text).map_err(|e| CorpusError::Registry(e.to_string()))?;
        let mut schemas = BTreeMap::new();
        for s in file.schemas {
            s.check().map_err(CorpusError::Registry)?;
            let key = (s.conference.clone(), s.year);
            if schemas.insert(key, s).is_some() {
                return Err(CorpusError::Registry("duplicate conference-year entry".into()));
            }
        }
        Ok(Self { version: file.version, schemas })
    }

    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn get(&self, conference: &str, year: u16) -> Option<&TemplateSchema> {
        self.schemas.get(&(conference.to_string(), year))
    }

    pub fn require(&self, conference: &str, year: u16) -> Result<&TemplateSchema, CorpusError> {
        self.get(conference, year).ok_or_else(|| CorpusError::UnknownSchema {
            conference: conference.to_string(),
            year,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &TemplateSchema> {
        self.schemas.values()
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_registry_has_one_entry_per_conference_year() {
        let reg = SchemaRegistry::bundled();
        assert_eq!(reg.len(), 16);
        assert!(reg.get("NeurIPS", 2020).is_none());
        let iclr22 = reg.get("ICLR", 2022).unwrap();
        assert_eq!(iclr22.field_names.len(), 9);
        assert_eq!(iclr22.field_names[0], "summary of the paper");
        assert_eq!(iclr22.recommendation_field.as_deref(), Some("recommendation"));
        let iclr24 = reg.get("ICLR", 2024).unwrap();
        assert_eq!(iclr24.field_names.len(), 10);
        assert_eq!(iclr24.numeric_field_ranges["confidence"].max, 5);
        assert_eq!(iclr24.numeric_field_ranges["soundness"].max, 4);
        assert_eq!(reg.get("NeurIPS", 2022).unwrap().field_names.len(), 11);
    }

    #[test]
    fn decision_vocabulary_checks() {
        let reg = SchemaRegistry::bundled();
        let iclr22 = reg.get("ICLR", 2022).unwrap();
        assert!(iclr22.is_valid_decision("accept, good paper"));
        assert!(!iclr22.is_valid_decision("accept"));
        let iclr21 = reg.get("ICLR", 2021).unwrap();
        assert!(iclr21.is_valid_decision("6: Marginally above acceptance threshold"));
        assert!(iclr21.is_valid_decision("8"));
        assert!(!iclr21.is_valid_decision("11"));
        assert!(!iclr21.is_valid_decision("accept"));
    }

    #[test]
    fn not_applicable_sentinel_is_in_range() {
        let r = NumericRange { min: 1, max: 4, not_applicable: Some(-999) };
        assert!(r.contains(-999.0));
        assert!(r.contains(4.0));
        assert!(!r.contains(0.0));
    }

    #[test]
    fn rejects_bad_ranges() {
        let text = r#"{"version":"x","schemas":[{"conference":"A","year":2020,"field_names":["a"],
            "numeric_field_ranges":{"a":{"min":5,"max":1}}}]}"#;
        assert!(SchemaRegistry::from_json(text).is_err());
        let empty = r#"{"version":"x","schemas":[{"conference":"A","year":2020,"field_names":[]}]}"#;
        assert!(SchemaRegistry::from_json(empty).is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(normalize_field_name(" Summary_of_the  Paper "), "summary of the paper");
        assert_eq!(parse_leading_number("6: marginally above"), Some(6.0));
        assert_eq!(parse_leading_number("-999"), Some(-999.0));
        assert_eq!(parse_leading_number("n/a"), None);
    }
}

//! Frozen prompt assets and placeholder rendering.
//!
//! The asset files under `assets/prompts/` are shipped verbatim; only the
//! `{placeholder}` slots are substituted at run time.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const REVIEW_SYSTEM: &str = include_str!("../assets/prompts/review_system.txt");
pub const REVIEW_USER: &str = include_str!("../assets/prompts/review_user.txt");
pub const ANCHOR_SYSTEM: &str = include_str!("../assets/prompts/anchor_system.txt");
pub const ANCHOR_USER: &str = include_str!("../assets/prompts/anchor_user.txt");
pub const ARCHETYPE_SYSTEM: &str = include_str!("../assets/prompts/archetype_system.txt");

pub const ICLR2022_GUIDELINE: &str = include_str!("../assets/prompts/iclr2022_guideline.md");
pub const ICLR2022_TEMPLATE: &str = include_str!("../assets/prompts/iclr2022_template.md");

pub const EDIT_MINIMUM: &str = include_str!("../assets/prompts/edit_minimum.txt");
pub const EDIT_MODERATE: &str = include_str!("../assets/prompts/edit_moderate.txt");
pub const EDIT_EXTENSIVE: &str = include_str!("../assets/prompts/edit_extensive.txt");
pub const EDIT_MAXIMUM: &str = include_str!("../assets/prompts/edit_maximum.txt");

pub const ARCHETYPE_BALANCED: &str = include_str!("../assets/prompts/archetype_balanced.txt");
pub const ARCHETYPE_CONSERVATIVE: &str = include_str!("../assets/prompts/archetype_conservative.txt");
pub const ARCHETYPE_INNOVATIVE: &str = include_str!("../assets/prompts/archetype_innovative.txt");
pub const ARCHETYPE_NITPICKY: &str = include_str!("../assets/prompts/archetype_nitpicky.txt");

/// Degree of AI editing applied to a human review, in increasing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditLevel {
    Minimum,
    Moderate,
    Extensive,
    Maximum,
}

impl EditLevel {
    pub const ALL: [EditLevel; 4] = [EditLevel::Minimum, EditLevel::Moderate, EditLevel::Extensive, EditLevel::Maximum];

    pub fn as_str(self) -> &'static str {
        match self {
            EditLevel::Minimum => "minimum",
            EditLevel::Moderate => "moderate",
            EditLevel::Extensive => "extensive",
            EditLevel::Maximum => "maximum",
        }
    }

    /// Relevance grade for ranking metrics; unedited reviews have grade 0.
    pub fn grade(self) -> u32 {
        self as u32 + 1
    }

    pub fn prompt(self) -> &'static str {
        match self {
            EditLevel::Minimum => EDIT_MINIMUM,
            EditLevel::Moderate => EDIT_MODERATE,
            EditLevel::Extensive => EDIT_EXTENSIVE,
            EditLevel::Maximum => EDIT_MAXIMUM,
        }
    }
}

impl fmt::Display for EditLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EditLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EditLevel::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown edit level '{s}'"))
    }
}

/// Reviewer persona used for archetype-prompted reviews.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Balanced,
    Conservative,
    Innovative,
    Nitpicky,
}

impl Archetype {
    pub const ALL: [Archetype; 4] =
        [Archetype::Balanced, Archetype::Conservative, Archetype::Innovative, Archetype::Nitpicky];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Balanced => "balanced",
            Archetype::Conservative => "conservative",
            Archetype::Innovative => "innovative",
            Archetype::Nitpicky => "nitpicky",
        }
    }

    pub fn persona(self) -> &'static str {
        match self {
            Archetype::Balanced => ARCHETYPE_BALANCED,
            Archetype::Conservative => ARCHETYPE_CONSERVATIVE,
            Archetype::Innovative => ARCHETYPE_INNOVATIVE,
            Archetype::Nitpicky => ARCHETYPE_NITPICKY,
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown archetype '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template placeholder {{{0}}} has no value")]
    Unresolved(String),
    #[error("value supplied for unknown placeholder {{{0}}}")]
    UnknownVariable(String),
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

/// Names of the `{placeholder}` slots in `template`, in first-seen order.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in placeholder_re().captures_iter(template) {
        if !out.iter().any(|p| p == &c[1]) {
            out.push(c[1].to_string());
        }
    }
    out
}

/// Substitutes every placeholder in one pass. Substituted values are never
/// re-scanned, so manuscript text containing `{text}` stays literal.
pub fn render(template: &str, vars: &BTreeMap<&str, &str>) -> Result<String, PromptError> {
    let wanted = placeholders(template);
    for name in vars.keys() {
        if !wanted.iter().any(|w| w == name) {
            return Err(PromptError::UnknownVariable((*name).to_string()));
        }
    }
    let mut missing = None;
    let out = placeholder_re().replace_all(template, |c: &regex::Captures| match vars.get(&c[1]) {
        Some(v) => (*v).to_string(),
        None => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(name) => Err(PromptError::Unresolved(name)),
        None => Ok(out.into_owned()),
    }
}

/// SHA-256 over the given parts, separated by NUL bytes.
pub fn content_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0u8]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_assets_have_expected_slots() {
        assert_eq!(placeholders(REVIEW_SYSTEM), vec!["reviewer_guideline", "review_template"]);
        assert_eq!(placeholders(REVIEW_USER), vec!["human_reviewer_decision", "text"]);
        assert_eq!(placeholders(ANCHOR_USER), vec!["text"]);
        assert!(placeholders(ANCHOR_SYSTEM).is_empty());
        assert!(placeholders(ICLR2022_GUIDELINE).is_empty());
        assert!(placeholders(ICLR2022_TEMPLATE).is_empty());
    }

    #[test]
    fn frozen_asset_anchors() {
        assert!(REVIEW_SYSTEM.starts_with("You are an AI researcher reviewing a paper"));
        assert!(ANCHOR_SYSTEM.contains("write a detailed review following a common AI conference review format"));
        assert!(EDIT_MINIMUM.starts_with("Please proofread my review for typos"));
        assert!(REVIEW_USER.contains("aligns with a '{human_reviewer_decision}' decision."));
        for a in [ARCHETYPE_BALANCED, ARCHETYPE_CONSERVATIVE, ARCHETYPE_INNOVATIVE, ARCHETYPE_NITPICKY] {
            assert!(a.starts_with("You "));
            assert!(!a.ends_with('}'));
        }
    }

    #[test]
    fn render_is_single_pass() {
        let vars = BTreeMap::from([("text", "{text} and {human_reviewer_decision}"), ("human_reviewer_decision", "accept")]);
        let out = render(REVIEW_USER, &vars).unwrap();
        assert!(out.contains("'accept' decision"));
        assert!(out.contains("```\n{text} and {human_reviewer_decision}\n```"));
    }

    #[test]
    fn render_errors() {
        let vars = BTreeMap::from([("text", "x")]);
        assert_eq!(render(REVIEW_USER, &vars), Err(PromptError::Unresolved("human_reviewer_decision".into())));
        let vars = BTreeMap::from([("text", "x"), ("bogus", "y")]);
        assert_eq!(render(ANCHOR_USER, &vars), Err(PromptError::UnknownVariable("bogus".into())));
    }

    #[test]
    fn levels_are_ordered_and_graded() {
        let grades: Vec<u32> = EditLevel::ALL.iter().map(|l| l.grade()).collect();
        assert_eq!(grades, vec![1, 2, 3, 4]);
        assert!(EditLevel::Minimum < EditLevel::Maximum);
        assert_eq!("Extensive".parse::<EditLevel>().unwrap(), EditLevel::Extensive);
        assert_eq!("nitpicky".parse::<Archetype>().unwrap().persona(), ARCHETYPE_NITPICKY);
    }

    #[test]
    fn hash_separates_parts() {
        assert_ne!(content_hash(&["ab", "c"]), content_hash(&["a", "bc"]));
        assert_eq!(content_hash(&["x"]).len(), 64);
    }
}

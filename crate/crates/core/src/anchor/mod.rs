//! Anchor-review detector.
//!
//! An anchor review is generated for each manuscript with a fixed generic
//! prompt. A test review is scored by the cosine similarity of its embedding
//! to the anchor's embedding; several anchors from different LLMs are
//! combined with an any-positive vote.

mod generate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use generate::{
    anchor_prompt, anchor_prompt_hash, truncate_manuscript, AnchorGenerator, AnchorStore,
};

use crate::calibration::CalibratedThreshold;
use crate::providers::{self, Embedder, EmbeddingVector, ProviderError};
use crate::score::{DetectionScore, Label, Orientation};

/// Anchor LLMs used when none are configured.
pub const DEFAULT_ANCHOR_LLMS: [&str; 3] = ["gpt-4o", "gemini", "claude"];

#[derive(Debug, thiserror::Error)]
pub enum AnchorError {
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of an all-zero vector")]
    ZeroVector,
    #[error("score from detector '{score}' classified with threshold for '{threshold}'")]
    DetectorMismatch { score: String, threshold: String },
    #[error("score orientation {score} differs from threshold orientation {threshold}")]
    OrientationMismatch { score: Orientation, threshold: Orientation },
    #[error("cannot vote over an empty ensemble")]
    EmptyEnsemble,
    #[error("no score for ensemble member '{0}'")]
    MissingMemberScore(String),
    #[error("paper text is empty")]
    EmptyPaper,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("anchor store {path}: {detail}")]
    Store { path: String, detail: String },
}

/// Detector id of the anchor detector for one anchor LLM.
pub fn anchor_detector_id(anchor_llm: &str) -> String {
    format!("anchor/{anchor_llm}")
}

/// Synthetic review of one manuscript, with its embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorReview {
    pub paper_id: String,
    pub anchor_llm: String,
    pub text: String,
    pub embedding: EmbeddingVector,
    pub prompt_hash: String,
    #[serde(default)]
    pub generated_unix: u64,
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]` against rounding.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, AnchorError> {
    cosine(&a.values, &b.values)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, AnchorError> {
    if a.len() != b.len() {
        return Err(AnchorError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(AnchorError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Similarity score from an already computed review embedding.
pub fn anchor_score_embedded(
    review_id: &str,
    review_embedding: &EmbeddingVector,
    anchor: &AnchorReview,
) -> Result<DetectionScore, AnchorError> {
    Ok(DetectionScore {
        detector_id: anchor_detector_id(&anchor.anchor_llm),
        review_id: review_id.to_string(),
        raw: cosine_similarity(&anchor.embedding, review_embedding)?,
        orientation: Orientation::HigherIsAi,
    })
}

/// Embeds `test_review` and scores it against `anchor`.
pub fn anchor_score(
    review_id: &str,
    test_review: &str,
    anchor: &AnchorReview,
    embedder: &dyn Embedder,
) -> Result<DetectionScore, AnchorError> {
    let emb = providers::embed(embedder, test_review)?;
    anchor_score_embedded(review_id, &emb, anchor)
}

/// AI iff the oriented score strictly exceeds the oriented threshold.
pub fn classify(score: &DetectionScore, th: &CalibratedThreshold) -> Result<Label, AnchorError> {
    if score.detector_id != th.detector_id {
        return Err(AnchorError::DetectorMismatch {
            score: score.detector_id.clone(),
            threshold: th.detector_id.clone(),
        });
    }
    if score.orientation != th.orientation {
        return Err(AnchorError::OrientationMismatch { score: score.orientation, threshold: th.orientation });
    }
    Ok(if th.is_ai(score.raw) { Label::Ai } else { Label::Human })
}

/// Any-positive vote.
pub fn vote(labels: &[Label]) -> Result<Label, AnchorError> {
    if labels.is_empty() {
        return Err(AnchorError::EmptyEnsemble);
    }
    Ok(if labels.contains(&Label::Ai) { Label::Ai } else { Label::Human })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    AnyPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMember {
    pub anchor_llm: String,
    pub threshold: CalibratedThreshold,
}

/// Anchors from several LLMs combined by an any-positive vote.
///
/// Built by [`crate::calibration::calibrate_voting`], which also stores each
/// anchor's sorted calibration scores. Those make a scalar ensemble score
/// available for ROC analysis: the largest per-anchor empirical CDF value
/// `#{calibration scores < s_a} / n`. The vote is AI exactly when that scalar
/// exceeds `quantile_index / n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingEnsemble {
    pub members: Vec<EnsembleMember>,
    pub rule: VoteRule,
    pub target_fpr: f64,
    pub quantile_index: usize,
    pub quantile_level: f64,
    pub achieved_calibration_fpr: f64,
    pub calibration_scores: BTreeMap<String, Vec<f64>>,
}

impl VotingEnsemble {
    pub fn anchor_llms(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.anchor_llm.as_str())
    }

    pub fn detector_id(&self) -> String {
        let names: Vec<&str> = self.anchor_llms().collect();
        format!("anchor-vote/{}", names.join("+"))
    }

    fn member_score(
        scores: &BTreeMap<String, f64>,
        anchor: &str,
    ) -> Result<f64, AnchorError> {
        scores.get(anchor).copied().ok_or_else(|| AnchorError::MissingMemberScore(anchor.to_string()))
    }

    /// Per-member labels for raw similarity scores keyed by anchor LLM.
    pub fn member_labels(&self, scores: &BTreeMap<String, f64>) -> Result<Vec<Label>, AnchorError> {
        self.members
            .iter()
            .map(|m| {
                let s = Self::member_score(scores, &m.anchor_llm)?;
                Ok(if m.threshold.is_ai(s) { Label::Ai } else { Label::Human })
            })
            .collect()
    }

    pub fn classify(&self, scores: &BTreeMap<String, f64>) -> Result<Label, AnchorError> {
        vote(&self.member_labels(scores)?)
    }

    /// Scalar ensemble score in `[0, 1]`; see the type docs.
    pub fn combined_score(&self, scores: &BTreeMap<String, f64>) -> Result<f64, AnchorError> {
        if self.members.is_empty() {
            return Err(AnchorError::EmptyEnsemble);
        }
        let mut best = 0usize;
        let mut n = 0usize;
        for m in &self.members {
            let s = Self::member_score(scores, &m.anchor_llm)?;
            let cal = self
                .calibration_scores
                .get(&m.anchor_llm)
                .ok_or_else(|| AnchorError::MissingMemberScore(m.anchor_llm.clone()))?;
            n = cal.len();
            best = best.max(cal.partition_point(|v| *v < s));
        }
        Ok(best as f64 / n as f64)
    }

    /// Threshold on [`Self::combined_score`] equivalent to the vote.
    pub fn combined_threshold(&self) -> f64 {
        let n = self.calibration_scores.values().next().map_or(1, Vec::len);
        self.quantile_index as f64 / n as f64
    }
}

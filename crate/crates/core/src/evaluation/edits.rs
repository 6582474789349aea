use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::ndcg_by_score;
use super::EvalError;
use crate::anchor::cosine_similarity;
use crate::calibration::CalibratedThreshold;
use crate::prompts::EditLevel;
use crate::providers::{self, Embedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedVariant {
    pub text: String,
    /// Raw detector score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Cosine similarity of this variant's embedding to the original's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similarity: Option<f64>,
}

/// A human review with one AI-edited variant per edit level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedReview {
    pub review_id: String,
    pub original: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original_score: Option<f64>,
    pub variants: BTreeMap<EditLevel, EditedVariant>,
}

impl EditedReview {
    pub fn new(review_id: &str, original: &str, edits: impl IntoIterator<Item = (EditLevel, String)>) -> Self {
        Self {
            review_id: review_id.to_string(),
            original: original.to_string(),
            original_score: None,
            variants: edits
                .into_iter()
                .map(|(l, text)| (l, EditedVariant { text, score: None, similarity: None }))
                .collect(),
        }
    }
}

/// Reviews with all four edit levels present.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EditLevelSet {
    reviews: Vec<EditedReview>,
}

impl EditLevelSet {
    pub fn new(reviews: Vec<EditedReview>) -> Result<Self, EvalError> {
        for r in &reviews {
            if let Some(level) = EditLevel::ALL.into_iter().find(|l| !r.variants.contains_key(l)) {
                return Err(EvalError::MissingEditLevel { review_id: r.review_id.clone(), level });
            }
        }
        Ok(Self { reviews })
    }

    pub fn reviews(&self) -> &[EditedReview] {
        &self.reviews
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    /// Fills in detector scores for originals and every variant.
    pub fn score_with<E>(&mut self, mut score: impl FnMut(&str) -> Result<f64, E>) -> Result<(), E> {
        for r in &mut self.reviews {
            r.original_score = Some(score(&r.original)?);
            for v in r.variants.values_mut() {
                v.score = Some(score(&v.text)?);
            }
        }
        Ok(())
    }

    fn variant_scores(&self, level: EditLevel) -> Result<Vec<f64>, EvalError> {
        self.reviews
            .iter()
            .map(|r| r.variants[&level].score.ok_or_else(|| EvalError::Unscored(r.review_id.clone())))
            .collect()
    }

    fn original_scores(&self) -> Result<Vec<f64>, EvalError> {
        self.reviews
            .iter()
            .map(|r| r.original_score.ok_or_else(|| EvalError::Unscored(r.review_id.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<f64>,
    pub by_level: BTreeMap<EditLevel, f64>,
}

/// Fraction of reviews classified as AI at each edit level, and optionally
/// among the unedited originals.
pub fn flag_rate_by_level(
    set: &EditLevelSet,
    th: &CalibratedThreshold,
    include_originals: bool,
) -> Result<FlagRates, EvalError> {
    if set.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let rate = |xs: &[f64]| xs.iter().filter(|s| th.is_ai(**s)).count() as f64 / xs.len() as f64;
    let mut by_level = BTreeMap::new();
    for level in EditLevel::ALL {
        by_level.insert(level, rate(&set.variant_scores(level)?));
    }
    let original = if include_originals { Some(rate(&set.original_scores()?)) } else { None };
    Ok(FlagRates { original, by_level })
}

/// NDCG of all variants (and originals at grade 0 when included) ranked by
/// oriented detector score, with edit levels as relevance grades.
pub fn edit_ranking_ndcg(
    set: &EditLevelSet,
    orientation: crate::score::Orientation,
    include_originals: bool,
) -> Result<f64, EvalError> {
    let mut items = Vec::new();
    for r in set.reviews() {
        if include_originals {
            let s = r.original_score.ok_or_else(|| EvalError::Unscored(r.review_id.clone()))?;
            items.push((orientation.orient(s), 0.0));
        }
        for (level, v) in &r.variants {
            let s = v.score.ok_or_else(|| EvalError::Unscored(r.review_id.clone()))?;
            items.push((orientation.orient(s), level.grade() as f64));
        }
    }
    ndcg_by_score(&items)
}

/// Mean cosine similarity between each level's edits and their originals.
/// Stores per-variant similarities in `set`.
pub fn edit_similarity_check(
    set: &mut EditLevelSet,
    embedder: &dyn Embedder,
) -> Result<BTreeMap<EditLevel, f64>, EvalError> {
    if set.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    let mut sums: BTreeMap<EditLevel, f64> = BTreeMap::new();
    for r in &mut set.reviews {
        let base = providers::embed(embedder, &r.original)?;
        for (level, v) in r.variants.iter_mut() {
            let sim = cosine_similarity(&base, &providers::embed(embedder, &v.text)?)?;
            v.similarity = Some(sim);
            *sums.entry(*level).or_default() += sim;
        }
    }
    let n = set.reviews.len() as f64;
    Ok(sums.into_iter().map(|(l, s)| (l, s / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::HashEmbedder;
    use crate::score::Orientation;

    fn th(theta: f64) -> CalibratedThreshold {
        CalibratedThreshold {
            detector_id: "d".into(),
            target_fpr: 0.1,
            theta,
            orientation: Orientation::HigherIsAi,
            achieved_calibration_fpr: 0.0,
            calibration_corpus_id: "c".into(),
            n_calibration: 10,
            corpus_fingerprint: None,
        }
    }

    fn set(n: usize) -> EditLevelSet {
        let reviews = (0..n)
            .map(|i| {
                EditedReview::new(
                    &format!("r{i}"),
                    &format!("orig {i}"),
                    EditLevel::ALL.map(|l| (l, format!("{l} {i}"))),
                )
            })
            .collect();
        EditLevelSet::new(reviews).unwrap()
    }

    #[test]
    fn missing_level_rejected() {
        let r = EditedReview::new("r", "o", [(EditLevel::Minimum, "x".to_string())]);
        assert!(matches!(
            EditLevelSet::new(vec![r]),
            Err(EvalError::MissingEditLevel { level: EditLevel::Moderate, .. })
        ));
    }

    #[test]
    fn flag_rates_extremes_and_monotone() {
        let mut s = set(4);
        // Score = level grade + review index / 10; originals score 0.
        s.score_with(|t: &str| -> Result<f64, EvalError> {
            let mut parts = t.split(' ');
            let head = parts.next().unwrap();
            let i: f64 = parts.next().unwrap().parse().unwrap();
            Ok(head.parse::<EditLevel>().map_or(0.0, |l| l.grade() as f64) + i / 10.0)
        })
        .unwrap();
        let all0 = flag_rate_by_level(&s, &th(100.0), true).unwrap();
        assert!(all0.by_level.values().all(|r| *r == 0.0) && all0.original == Some(0.0));
        let all1 = flag_rate_by_level(&s, &th(-1.0), true).unwrap();
        assert!(all1.by_level.values().all(|r| *r == 1.0));
        // θ = 2.15: moderate flags r2, r3 (2.2, 2.3); extensive and maximum all.
        let mid = flag_rate_by_level(&s, &th(2.15), false).unwrap();
        let rates: Vec<f64> = mid.by_level.values().copied().collect();
        assert_eq!(rates, vec![0.0, 0.5, 1.0, 1.0]);
        assert!(mid.original.is_none());
        assert_eq!(edit_ranking_ndcg(&s, Orientation::HigherIsAi, true).unwrap(), 1.0);
    }

    #[test]
    fn identity_edit_has_similarity_one() {
        let mut s = EditLevelSet::new(vec![EditedReview::new(
            "r",
            "the method is sound and well evaluated",
            [
                (EditLevel::Minimum, "the method is sound and well evaluated".to_string()),
                (EditLevel::Moderate, "the method is sound and thoroughly evaluated".to_string()),
                (EditLevel::Extensive, "this approach seems sound and is thoroughly evaluated".to_string()),
                (EditLevel::Maximum, "overall a convincing contribution with strong experiments".to_string()),
            ],
        )])
        .unwrap();
        let sims = edit_similarity_check(&mut s, &HashEmbedder::new(512, 9)).unwrap();
        assert!((sims[&EditLevel::Minimum] - 1.0).abs() < 1e-12);
        assert!(sims[&EditLevel::Maximum] < sims[&EditLevel::Minimum]);
        assert!(s.reviews()[0].variants[&EditLevel::Moderate].similarity.is_some());
    }
}

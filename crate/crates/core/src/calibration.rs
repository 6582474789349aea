//! Threshold calibration at a target false-positive rate.
//!
//! Thresholds are always observed calibration scores. A review is labelled
//! AI when its oriented score is strictly above the oriented threshold, so
//! the achieved FPR on the calibration set is exactly computable.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::anchor::{anchor_detector_id, EnsembleMember, VoteRule, VotingEnsemble};
use crate::corpus::{Corpus, ReviewRecord, Subset};
use crate::score::Orientation;

#[derive(Debug, thiserror::Error)]
pub enum CalibrationError {
    #[error("no calibration scores")]
    EmptyScores,
    #[error("target FPR {0} must lie in (0, 1)")]
    InvalidTarget(f64),
    #[error("calibration score {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("anchor '{anchor}' has {got} calibration scores, expected {expected}")]
    InconsistentReviewSets { anchor: String, expected: usize, got: usize },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

/// Decision threshold for one detector, with the calibration it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedThreshold {
    pub detector_id: String,
    pub target_fpr: f64,
    /// Threshold in the detector's raw units.
    pub theta: f64,
    pub orientation: Orientation,
    pub achieved_calibration_fpr: f64,
    pub calibration_corpus_id: String,
    pub n_calibration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_fingerprint: Option<String>,
}

impl CalibratedThreshold {
    /// Label rule: AI iff the oriented score strictly exceeds the oriented θ.
    pub fn is_ai(&self, raw: f64) -> bool {
        self.orientation.orient(raw) > self.orientation.orient(self.theta)
    }
}

fn allowed_positives(target_fpr: f64, n: usize) -> usize {
    (target_fpr * n as f64 + 1e-9).floor() as usize
}

fn check_inputs(scores: &[f64], target_fpr: f64) -> Result<(), CalibrationError> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(CalibrationError::InvalidTarget(target_fpr));
    }
    if scores.is_empty() {
        return Err(CalibrationError::EmptyScores);
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CalibrationError::NonFiniteScore { index });
    }
    if (scores.len() as f64) < 1.0 / target_fpr {
        log::warn!(
            "{} calibration scores cannot resolve a target FPR of {target_fpr}; need at least {}",
            scores.len(),
            (1.0 / target_fpr).ceil()
        );
    }
    Ok(())
}

fn sorted(scores: &[f64]) -> Vec<f64> {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of entries of ascending `sorted` strictly greater than `x`.
fn count_above(sorted: &[f64], x: f64) -> usize {
    sorted.len() - sorted.partition_point(|v| *v <= x)
}

/// Smallest observed score θ with `#{s > θ} / n ≤ target_fpr`. Scores must be
/// oriented so that higher means more AI-like. The returned threshold has an
/// empty detector id and `higher_is_ai` orientation.
pub fn calibrate_threshold(scores: &[f64], target_fpr: f64) -> Result<CalibratedThreshold, CalibrationError> {
    check_inputs(scores, target_fpr)?;
    let s = sorted(scores);
    let n = s.len();
    let allowed = allowed_positives(target_fpr, n);
    let theta = s
        .iter()
        .copied()
        .find(|&t| count_above(&s, t) <= allowed)
        .expect("the maximum score always qualifies");
    Ok(CalibratedThreshold {
        detector_id: String::new(),
        target_fpr,
        theta,
        orientation: Orientation::HigherIsAi,
        achieved_calibration_fpr: count_above(&s, theta) as f64 / n as f64,
        calibration_corpus_id: String::new(),
        n_calibration: n,
        corpus_fingerprint: None,
    })
}

/// Calibrates a detector from raw human scores in its own orientation.
pub fn calibrate_detector(
    detector_id: &str,
    orientation: Orientation,
    raw_human_scores: &[f64],
    target_fpr: f64,
    calibration_corpus_id: &str,
) -> Result<CalibratedThreshold, CalibrationError> {
    let oriented: Vec<f64> = raw_human_scores.iter().map(|r| orientation.orient(*r)).collect();
    let mut th = calibrate_threshold(&oriented, target_fpr)?;
    th.detector_id = detector_id.to_string();
    th.orientation = orientation;
    th.theta = orientation.unorient(th.theta);
    th.calibration_corpus_id = calibration_corpus_id.to_string();
    Ok(th)
}

/// Any-positive false-positive count on the calibration reviews when every
/// anchor uses its `k`-th smallest score as threshold. `scores` holds the
/// per-review lists, `sorted_scores` the same lists sorted ascending.
pub fn ensemble_positives_at(
    scores: &BTreeMap<String, Vec<f64>>,
    sorted_scores: &BTreeMap<String, Vec<f64>>,
    k: usize,
) -> usize {
    let n = scores.values().next().map_or(0, Vec::len);
    (0..n)
        .filter(|&i| scores.iter().any(|(a, s)| s[i] > sorted_scores[a][k]))
        .count()
}

/// Calibrates an any-positive ensemble of anchors that all scored the same
/// calibration reviews (index `i` in every list is the same review).
///
/// Every anchor uses the empirical quantile of its own scores at a shared
/// level `q = (k + 1) / n`; `k` is found by bisection as the smallest index
/// whose ensemble FPR is at most the target. Ensemble FPR is non-increasing
/// in `k`, so this is the largest achievable FPR not above the target.
pub fn calibrate_voting(
    per_anchor_human_scores: &BTreeMap<String, Vec<f64>>,
    target_fpr: f64,
    calibration_corpus_id: &str,
) -> Result<VotingEnsemble, CalibrationError> {
    let Some(first) = per_anchor_human_scores.values().next() else { return Err(CalibrationError::EmptyScores) };
    let n = first.len();
    for (anchor, scores) in per_anchor_human_scores {
        if scores.len() != n {
            return Err(CalibrationError::InconsistentReviewSets {
                anchor: anchor.clone(),
                expected: n,
                got: scores.len(),
            });
        }
        check_inputs(scores, target_fpr)?;
    }
    let allowed = allowed_positives(target_fpr, n);
    let sorted_lists: BTreeMap<String, Vec<f64>> =
        per_anchor_human_scores.iter().map(|(a, s)| (a.clone(), sorted(s))).collect();
    let fp = |k: usize| ensemble_positives_at(per_anchor_human_scores, &sorted_lists, k);
    // fp(n - 1) == 0, so the search interval always contains a valid index.
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if fp(mid) <= allowed {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let k = lo;
    let members = sorted_lists
        .iter()
        .map(|(anchor, s)| EnsembleMember {
            anchor_llm: anchor.clone(),
            threshold: CalibratedThreshold {
                detector_id: anchor_detector_id(anchor),
                target_fpr,
                theta: s[k],
                orientation: Orientation::HigherIsAi,
                achieved_calibration_fpr: count_above(s, s[k]) as f64 / n as f64,
                calibration_corpus_id: calibration_corpus_id.to_string(),
                n_calibration: n,
                corpus_fingerprint: None,
            },
        })
        .collect();
    Ok(VotingEnsemble {
        members,
        rule: VoteRule::AnyPositive,
        target_fpr,
        quantile_index: k,
        quantile_level: (k + 1) as f64 / n as f64,
        achieved_calibration_fpr: fp(k) as f64 / n as f64,
        calibration_scores: sorted_lists,
    })
}

/// Which calibration reviews to use.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationFilter {
    /// Restrict to these conferences; `None` keeps all of them. Passing only
    /// `ICLR` gives the out-of-domain setting.
    #[serde(default)]
    pub conferences: Option<Vec<String>>,
    /// Drop reviews from 2023 onwards, whose "human" text may be LLM-assisted.
    #[serde(default)]
    pub exclude_post_chatgpt: bool,
}

impl CalibrationFilter {
    pub fn out_of_domain() -> Self {
        Self { conferences: Some(vec!["ICLR".into()]), exclude_post_chatgpt: false }
    }

    pub fn keeps(&self, r: &ReviewRecord) -> bool {
        r.subset == Subset::Calibration
            && r.source.is_human()
            && self.conferences.as_ref().is_none_or(|cs| cs.iter().any(|c| c.eq_ignore_ascii_case(&r.conference)))
            && !(self.exclude_post_chatgpt && r.is_post_chatgpt())
    }

    /// Human calibration reviews selected by this filter.
    pub fn apply(&self, corpus: &Corpus) -> Corpus {
        corpus.filtered(|r| self.keeps(r))
    }

    /// Short identifier such as `ICLR-subset` or `all-subset-pre2023`.
    pub fn corpus_id(&self) -> String {
        let mut id = match &self.conferences {
            Some(cs) => cs.join("+"),
            None => "all".into(),
        };
        id.push_str("-subset");
        if self.exclude_post_chatgpt {
            id.push_str("-pre2023");
        }
        id
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ThresholdFile {
    pub thresholds: Vec<CalibratedThreshold>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ensembles: Vec<VotingEnsemble>,
}

impl ThresholdFile {
    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn find(&self, detector_id: &str, target_fpr: f64) -> Option<&CalibratedThreshold> {
        self.thresholds
            .iter()
            .find(|t| t.detector_id == detector_id && (t.target_fpr - target_fpr).abs() < 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force: try every observed value, keep the smallest whose
    /// exceedance fraction is within target.
    fn oracle(scores: &[f64], target: f64) -> (f64, f64) {
        let n = scores.len() as f64;
        let mut best: Option<(f64, f64)> = None;
        for &t in scores {
            let fpr = scores.iter().filter(|s| **s > t).count() as f64 / n;
            if fpr <= target + 1e-12 && best.is_none_or(|(b, _)| t < b) {
                best = Some((t, fpr));
            }
        }
        best.unwrap()
    }

    #[test]
    fn tenths_at_ten_percent() {
        let s: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let th = calibrate_threshold(&s, 0.10).unwrap();
        assert_eq!(th.theta, 0.9);
        assert!((th.achieved_calibration_fpr - 0.10).abs() < 1e-12);
        assert_eq!((th.theta, th.achieved_calibration_fpr), oracle(&s, 0.10));
    }

    #[test]
    fn one_to_four_at_half() {
        let th = calibrate_threshold(&[3.0, 1.0, 4.0, 2.0], 0.5).unwrap();
        assert_eq!((th.theta, th.achieved_calibration_fpr), (2.0, 0.5));
    }

    #[test]
    fn tiny_target_gives_max() {
        let th = calibrate_threshold(&[0.3, 0.9, 0.1], 1e-6).unwrap();
        assert_eq!((th.theta, th.achieved_calibration_fpr), (0.9, 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(calibrate_threshold(&[], 0.1), Err(CalibrationError::EmptyScores)));
        assert!(matches!(calibrate_threshold(&[1.0], 0.0), Err(CalibrationError::InvalidTarget(_))));
        assert!(matches!(calibrate_threshold(&[1.0], 1.0), Err(CalibrationError::InvalidTarget(_))));
        assert!(matches!(calibrate_threshold(&[1.0, f64::NAN], 0.5), Err(CalibrationError::NonFiniteScore { index: 1 })));
        let m = BTreeMap::from([("a".to_string(), vec![1.0, 2.0]), ("b".to_string(), vec![1.0])]);
        assert!(matches!(calibrate_voting(&m, 0.5, "c"), Err(CalibrationError::InconsistentReviewSets { .. })));
        assert!(matches!(calibrate_voting(&BTreeMap::new(), 0.5, "c"), Err(CalibrationError::EmptyScores)));
    }

    #[test]
    fn lower_is_ai_detector_round_trips_through_orientation() {
        // Raw scores where small means AI; target 25% of 4 → one positive.
        let th = calibrate_detector("rank", Orientation::LowerIsAi, &[5.0, 2.0, 8.0, 3.0], 0.25, "c").unwrap();
        assert_eq!(th.theta, 3.0);
        assert!(th.is_ai(2.0));
        assert!(!th.is_ai(3.0));
        assert_eq!(th.achieved_calibration_fpr, 0.25);
    }

    #[test]
    fn single_anchor_voting_matches_threshold() {
        let s = vec![0.4, 0.1, 0.7, 0.7, 0.2, 0.9, 0.3, 0.5, 0.6, 0.8];
        for target in [0.05, 0.1, 0.2, 0.35, 0.5] {
            let single = calibrate_threshold(&s, target).unwrap();
            let ens = calibrate_voting(&BTreeMap::from([("a".to_string(), s.clone())]), target, "c").unwrap();
            assert_eq!(ens.members[0].threshold.theta, single.theta);
            assert_eq!(ens.achieved_calibration_fpr, single.achieved_calibration_fpr);
        }
    }

    #[test]
    fn duplicated_anchor_adds_nothing() {
        let s: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
        let single = calibrate_threshold(&s, 0.1).unwrap();
        let ens = calibrate_voting(&BTreeMap::from([("a".into(), s.clone()), ("b".into(), s.clone())]), 0.1, "c").unwrap();
        assert!(ens.members.iter().all(|m| m.threshold.theta == single.theta));
        assert_eq!(ens.achieved_calibration_fpr, single.achieved_calibration_fpr);
    }

    #[test]
    fn filter_ids() {
        assert_eq!(CalibrationFilter::out_of_domain().corpus_id(), "ICLR-subset");
        let f = CalibrationFilter { conferences: None, exclude_post_chatgpt: true };
        assert_eq!(f.corpus_id(), "all-subset-pre2023");
    }

    #[test]
    fn threshold_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut th = calibrate_detector("entropy", Orientation::LowerIsAi, &[1.0, 2.0, 3.0], 0.4, "ICLR-subset").unwrap();
        th.corpus_fingerprint = Some("abc".into());
        let ens = calibrate_voting(&BTreeMap::from([("x".into(), vec![0.1, 0.2, 0.3])]), 0.4, "c").unwrap();
        let f = ThresholdFile { thresholds: vec![th.clone()], ensembles: vec![ens.clone()] };
        let p = dir.path().join("t/thresholds.json");
        f.save(&p).unwrap();
        let back = ThresholdFile::load(&p).unwrap();
        assert_eq!(back.thresholds, vec![th.clone()]);
        assert_eq!(back.ensembles, vec![ens]);
        assert_eq!(back.find("entropy", 0.4), Some(&th));
    }

    proptest! {
        #[test]
        fn matches_brute_force(scores in prop::collection::vec(0i32..40, 1..60), t in 0.001f64..0.999) {
            let s: Vec<f64> = scores.iter().map(|v| *v as f64 / 4.0).collect();
            let th = calibrate_threshold(&s, t).unwrap();
            let (theta, fpr) = oracle(&s, t);
            prop_assert_eq!(th.theta, theta);
            prop_assert_eq!(th.achieved_calibration_fpr, fpr);
            prop_assert!(th.achieved_calibration_fpr <= t);
        }

        #[test]
        fn monotone_in_target(scores in prop::collection::vec(-50i32..50, 1..80), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            let s: Vec<f64> = scores.iter().map(|v| *v as f64).collect();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(calibrate_threshold(&s, hi).unwrap().theta <= calibrate_threshold(&s, lo).unwrap().theta);
        }

        #[test]
        fn voting_is_conservative_and_maximal(
            a in prop::collection::vec(0i32..30, 5..60),
            seed in 0u64..1000,
            t in 0.01f64..0.5,
        ) {
            let n = a.len();
            let b: Vec<f64> = (0..n).map(|i| ((i as u64 * 7919 + seed) % 31) as f64).collect();
            let a: Vec<f64> = a.iter().map(|v| *v as f64).collect();
            let m = BTreeMap::from([("a".to_string(), a.clone()), ("b".to_string(), b.clone())]);
            let ens = calibrate_voting(&m, t, "c").unwrap();
            let labels = |ens: &VotingEnsemble| -> usize {
                (0..n).filter(|&i| {
                    let s = BTreeMap::from([("a".to_string(), a[i]), ("b".to_string(), b[i])]);
                    ens.classify(&s).unwrap() == crate::score::Label::Ai
                }).count()
            };
            let fp = labels(&ens);
            prop_assert!(fp as f64 / n as f64 <= t + 1e-12);
            prop_assert_eq!(fp as f64 / n as f64, ens.achieved_calibration_fpr);
            // Any smaller shared index exceeds the target.
            let sorted_lists: BTreeMap<String, Vec<f64>> = m.iter().map(|(k, v)| (k.clone(), sorted(v))).collect();
            for k in 0..ens.quantile_index {
                prop_assert!(ensemble_positives_at(&m, &sorted_lists, k) as f64 / n as f64 > t);
            }
            // The scalar ensemble score reproduces the vote.
            for i in 0..n {
                let s = BTreeMap::from([("a".to_string(), a[i]), ("b".to_string(), b[i])]);
                let by_scalar = ens.combined_score(&s).unwrap() > ens.combined_threshold();
                prop_assert_eq!(by_scalar, ens.classify(&s).unwrap() == crate::score::Label::Ai);
            }
        }
    }
}

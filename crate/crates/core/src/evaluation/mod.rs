//! Detector evaluation: ROC/AUC, rates at calibrated thresholds with
//! bootstrap uncertainty, edit-level analyses and paired score statistics.

mod edits;
mod plot;
mod roc;
mod stats;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use edits::{edit_ranking_ndcg, edit_similarity_check, flag_rate_by_level, EditLevelSet, EditedReview, EditedVariant, FlagRates};
pub use plot::{histogram_svg, roc_svg};
pub use roc::{
    auc, bootstrap_replicate, bootstrap_uncertainty, rates_at_threshold, roc_curve, sample_sd, trapezoid_area,
    RocPoint, DEFAULT_RESAMPLES,
};
pub use stats::{
    category_range, difference_summary, midranks, ndcg, ndcg_by_score, score_difference_summary,
    wilcoxon_signed_rank, HistogramBin, ScoreDifferenceSummary, WilcoxonMethod, WilcoxonResult,
    WILCOXON_EXACT_MAX_N,
};

use crate::anchor::AnchorError;
use crate::calibration::CalibratedThreshold;
use crate::prompts::EditLevel;
use crate::providers::ProviderError;
use crate::score::Orientation;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("both classes need at least one score")]
    EmptyScores,
    #[error("score is NaN or not finite")]
    NanScore,
    #[error("bootstrap needs at least 2 resamples, got {0}")]
    TooFewResamples(usize),
    #[error("every relevance grade is zero")]
    AllZeroGrades,
    #[error("relevance grade {0} is negative or not finite")]
    InvalidGrade(f64),
    #[error("all paired differences are zero")]
    AllZeroDiffs,
    #[error("unknown score category '{0}'")]
    UnknownCategory(String),
    #[error("review '{review_id}' lacks the {level} edit")]
    MissingEditLevel { review_id: String, level: EditLevel },
    #[error("review '{0}' has not been scored")]
    Unscored(String),
    #[error("threshold for '{threshold}' used on scores of '{detector}'")]
    DetectorMismatch { detector: String, threshold: String },
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Serializes `f64` with infinities as the strings `"inf"` and `"-inf"`.
pub mod inf_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("expected number, 'inf' or '-inf', got '{other}'"))),
            },
        }
    }
}

/// Outcome at one calibrated threshold on the test corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRow {
    pub target_fpr: f64,
    pub theta: f64,
    pub calibration_fpr: f64,
    pub actual_fpr: f64,
    pub actual_tpr: f64,
    pub fpr_sd: f64,
    pub tpr_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub detector_id: String,
    pub orientation: Orientation,
    pub n_ai: usize,
    pub n_human: usize,
    pub rows: Vec<TargetRow>,
    pub auc: f64,
    pub roc: Vec<RocPoint>,
    pub bootstrap_resamples: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_fingerprint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fingerprint: Option<String>,
}

/// Evaluates one detector on raw test scores of AI (`pos`) and human
/// (`neg`) reviews at each calibrated threshold.
pub fn evaluate_detector(
    detector_id: &str,
    orientation: Orientation,
    pos: &[f64],
    neg: &[f64],
    thresholds: &[CalibratedThreshold],
    n_resamples: usize,
    seed: u64,
) -> Result<EvaluationReport, EvalError> {
    let opos: Vec<f64> = pos.iter().map(|s| orientation.orient(*s)).collect();
    let oneg: Vec<f64> = neg.iter().map(|s| orientation.orient(*s)).collect();
    let mut rows = Vec::with_capacity(thresholds.len());
    for th in thresholds {
        if th.detector_id != detector_id {
            return Err(EvalError::DetectorMismatch { detector: detector_id.into(), threshold: th.detector_id.clone() });
        }
        let (actual_fpr, actual_tpr) = rates_at_threshold(pos, neg, th)?;
        let (fpr_sd, tpr_sd) = bootstrap_uncertainty(pos, neg, th, n_resamples, seed)?;
        rows.push(TargetRow {
            target_fpr: th.target_fpr,
            theta: th.theta,
            calibration_fpr: th.achieved_calibration_fpr,
            actual_fpr,
            actual_tpr,
            fpr_sd,
            tpr_sd,
        });
    }
    Ok(EvaluationReport {
        detector_id: detector_id.to_string(),
        orientation,
        n_ai: pos.len(),
        n_human: neg.len(),
        rows,
        auc: auc(&opos, &oneg)?,
        roc: roc_curve(&opos, &oneg)?,
        bootstrap_resamples: n_resamples,
        seed,
        calibration_fingerprint: thresholds.first().and_then(|t| t.corpus_fingerprint.clone()),
        test_fingerprint: None,
    })
}

/// One row per detector and target FPR.
pub fn write_table_csv<W: Write>(w: W, reports: &[EvaluationReport]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["detector_id", "target_fpr", "actual_fpr", "fpr_sd", "actual_tpr", "tpr_sd", "auc"])?;
    for r in reports {
        for row in &r.rows {
            out.write_record([
                r.detector_id.clone(),
                row.target_fpr.to_string(),
                format!("{:.4}", row.actual_fpr),
                format!("{:.4}", row.fpr_sd),
                format!("{:.4}", row.actual_tpr),
                format!("{:.4}", row.tpr_sd),
                format!("{:.4}", r.auc),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_roc_csv<W: Write>(w: W, reports: &[EvaluationReport]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["detector_id", "threshold", "fpr", "tpr"])?;
    for r in reports {
        for p in &r.roc {
            let t = if p.threshold.is_infinite() {
                if p.threshold > 0.0 { "inf".to_string() } else { "-inf".to_string() }
            } else {
                format!("{:?}", p.threshold)
            };
            out.write_record([r.detector_id.clone(), t, p.fpr.to_string(), p.tpr.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_histogram_csv<W: Write>(w: W, summaries: &[ScoreDifferenceSummary]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["category", "diff", "count"])?;
    for s in summaries {
        for b in &s.bins {
            out.write_record([s.category.clone(), b.diff.to_string(), b.count.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

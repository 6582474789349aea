use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;
use crate::corpus::PairedReview;

/// NDCG of relevance grades listed in ranked order (best-ranked first).
/// Gain is `2^g - 1`, the discount at 1-based position `i` is
/// `1 / log2(i + 1)`.
pub fn ndcg(grades_in_rank_order: &[f64]) -> Result<f64, EvalError> {
    if grades_in_rank_order.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if let Some(g) = grades_in_rank_order.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(EvalError::InvalidGrade(*g));
    }
    let dcg = |gs: &[f64]| -> f64 {
        gs.iter().enumerate().map(|(i, g)| (2f64.powf(*g) - 1.0) / ((i + 2) as f64).log2()).sum()
    };
    let mut ideal = grades_in_rank_order.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        return Err(EvalError::AllZeroGrades);
    }
    Ok(dcg(grades_in_rank_order) / idcg)
}

/// NDCG of `(oriented score, grade)` items ranked by score, highest first.
/// Equal scores keep their input order.
pub fn ndcg_by_score(items: &[(f64, f64)]) -> Result<f64, EvalError> {
    let mut ranked = items.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    ndcg(&ranked.iter().map(|x| x.1).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    /// Two-sided p-value in `(0, 1]`.
    pub p_value: f64,
    pub method: WilcoxonMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
}

/// Largest sample size tested with the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 12;

/// Midranks (1-based) of `xs`, ties sharing the average rank.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in &idx[i..=j] {
            ranks[*k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test of paired differences. Zero
/// differences are dropped and tied magnitudes get midranks. Up to
/// [`WILCOXON_EXACT_MAX_N`] differences the p-value is exact, by
/// enumerating every sign assignment; above that a tie-corrected normal
/// approximation with continuity correction is used.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(EvalError::NanScore);
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(EvalError::AllZeroDiffs);
    }
    let n = nz.len();
    let ranks = midranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let mu = total / 2.0;
    let dev = (w_plus - mu).abs();
    let (p, method, z) = if n <= WILCOXON_EXACT_MAX_N {
        let mut extreme = 0u64;
        for mask in 0u32..(1u32 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if (w - mu).abs() >= dev - 1e-9 {
                extreme += 1;
            }
        }
        (extreme as f64 / (1u64 << n) as f64, WilcoxonMethod::Exact, None)
    } else {
        let nf = n as f64;
        let mut tie_term = 0.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let j = sorted[i..].iter().take_while(|r| **r == sorted[i]).count();
            let t = j as f64;
            tie_term += t * t * t - t;
            i += j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        let z = ((dev - 0.5).max(0.0)) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * normal.sf(z), WilcoxonMethod::NormalApproximation, Some(z))
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        method,
        z,
    })
}

/// Score range of a numeric review category.
pub fn category_range(category: &str) -> Option<(i64, i64)> {
    match category {
        "confidence" => Some((1, 5)),
        "soundness" | "presentation" | "contribution" => Some((1, 4)),
        "rating" => Some((1, 10)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub diff: i64,
    pub count: usize,
}

/// Distribution of `AI score - human score` over matched pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDifferenceSummary {
    pub category: String,
    pub n_pairs: usize,
    /// Pairs where either side lacks the category.
    pub n_skipped: usize,
    pub mean_diff: Option<f64>,
    pub bins: Vec<HistogramBin>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wilcoxon: Option<WilcoxonResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

pub fn score_difference_summary(pairs: &[PairedReview], category: &str) -> Result<ScoreDifferenceSummary, EvalError> {
    let (lo, hi) = category_range(category).ok_or_else(|| EvalError::UnknownCategory(category.to_string()))?;
    let mut diffs = Vec::new();
    let mut n_skipped = 0;
    for p in pairs {
        match (p.ai.numeric_score(category), p.human.numeric_score(category)) {
            (Some(a), Some(h)) => diffs.push(a - h),
            _ => n_skipped += 1,
        }
    }
    Ok(difference_summary(category, &diffs, n_skipped, hi - lo))
}

/// Histogram over `[-span, span]`, widened if any difference falls outside.
pub fn difference_summary(category: &str, diffs: &[i64], n_skipped: usize, span: i64) -> ScoreDifferenceSummary {
    let lo = diffs.iter().copied().min().unwrap_or(0).min(-span);
    let hi = diffs.iter().copied().max().unwrap_or(0).max(span);
    let bins = (lo..=hi)
        .map(|d| HistogramBin { diff: d, count: diffs.iter().filter(|x| **x == d).count() })
        .collect();
    let as_f: Vec<f64> = diffs.iter().map(|d| *d as f64).collect();
    let (wilcoxon, note) = if diffs.is_empty() {
        (None, Some("no pairs with this category".to_string()))
    } else {
        match wilcoxon_signed_rank(&as_f) {
            Ok(w) => (Some(w), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    ScoreDifferenceSummary {
        category: category.to_string(),
        n_pairs: diffs.len(),
        n_skipped,
        mean_diff: (!diffs.is_empty()).then(|| as_f.iter().sum::<f64>() / as_f.len() as f64),
        bins,
        wilcoxon,
        note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg(&[4.0, 3.0, 2.0, 1.0]).unwrap(), 1.0);
        assert_eq!(ndcg(&[2.0]).unwrap(), 1.0);
        // Worst order of grades 1..4, written out term by term.
        let dcg = 1.0 / 2f64.log2() + 3.0 / 3f64.log2() + 7.0 / 4f64.log2() + 15.0 / 5f64.log2();
        let idcg = 15.0 / 2f64.log2() + 7.0 / 3f64.log2() + 3.0 / 4f64.log2() + 1.0 / 5f64.log2();
        assert!((ndcg(&[1.0, 2.0, 3.0, 4.0]).unwrap() - dcg / idcg).abs() < 1e-12);
        assert!(matches!(ndcg(&[0.0, 0.0]), Err(EvalError::AllZeroGrades)));
        assert!(matches!(ndcg(&[1.0, -1.0]), Err(EvalError::InvalidGrade(_))));
        // Within-grade swaps keep NDCG at one.
        assert_eq!(ndcg_by_score(&[(0.9, 2.0), (0.8, 2.0), (0.1, 0.0)]).unwrap(), 1.0);
        assert!(ndcg_by_score(&[(0.1, 2.0), (0.8, 0.0)]).unwrap() < 1.0);
    }

    #[test]
    fn wilcoxon_examples() {
        let r = wilcoxon_signed_rank(&[1.0, -1.0]).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(matches!(wilcoxon_signed_rank(&[0.0, 0.0]), Err(EvalError::AllZeroDiffs)));
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!((r.p_value - 0.0625).abs() < 1e-12);
        assert_eq!((r.w_plus, r.w_minus, r.statistic), (15.0, 0.0, 0.0));
        assert_eq!(r.method, WilcoxonMethod::Exact);
    }

    #[test]
    fn wilcoxon_large_sample_uses_normal() {
        let d: Vec<f64> = (1..=30).map(|i| if i % 3 == 0 { -(i as f64) } else { i as f64 }).collect();
        let r = wilcoxon_signed_rank(&d).unwrap();
        assert_eq!(r.method, WilcoxonMethod::NormalApproximation);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        // Hand check: n = 30, no ties, sigma^2 = 30*31*61/24 = 2363.75.
        let w_minus: f64 = (1..=30).filter(|i| i % 3 == 0).map(|i| i as f64).sum();
        assert_eq!(r.w_minus, w_minus);
        let z = ((465.0 - w_minus - 232.5f64).abs() - 0.5) / 2363.75f64.sqrt();
        assert!((r.z.unwrap() - z).abs() < 1e-12);
    }

    #[test]
    fn midranks_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn confidence_bins_span_pm4() {
        let s = difference_summary("confidence", &[0, 1, 1, -2, 0, 3], 0, 4);
        let bins: Vec<i64> = s.bins.iter().map(|b| b.diff).collect();
        assert_eq!(bins, (-4..=4).collect::<Vec<_>>());
        let counts: Vec<usize> = s.bins.iter().map(|b| b.count).collect();
        assert_eq!(counts, vec![0, 0, 1, 0, 2, 2, 0, 1, 0]);
        assert_eq!(s.n_pairs, 6);
        let z = difference_summary("rating", &[0, 0], 0, 9);
        assert!(z.wilcoxon.is_none());
        assert_eq!(z.bins.iter().find(|b| b.diff == 0).unwrap().count, 2);
        assert!(z.note.unwrap().contains("zero"));
    }
}

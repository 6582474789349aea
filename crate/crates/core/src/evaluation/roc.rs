use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::calibration::CalibratedThreshold;

/// One operating point. `threshold` is in oriented units (higher means more
/// AI-like); the endpoints use `+inf` and `-inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "super::inf_f64")]
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

fn check(pos: &[f64], neg: &[f64]) -> Result<(), EvalError> {
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::EmptyScores);
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    Ok(())
}

fn count_above(sorted_asc: &[f64], x: f64) -> usize {
    sorted_asc.len() - sorted_asc.partition_point(|v| *v <= x)
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// ROC curve over oriented scores: one point per distinct observed score
/// plus the `+inf` and `-inf` endpoints, labelling `s > threshold` as AI.
/// Points are ordered by decreasing threshold, so FPR and TPR never decrease.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<Vec<RocPoint>, EvalError> {
    check(pos, neg)?;
    let (p, n) = (sorted(pos), sorted(neg));
    let mut thresholds: Vec<f64> = p.iter().chain(&n).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut out = Vec::with_capacity(thresholds.len() + 2);
    let point = |t: f64| RocPoint {
        threshold: t,
        fpr: count_above(&n, t) as f64 / n.len() as f64,
        tpr: count_above(&p, t) as f64 / p.len() as f64,
    };
    if thresholds.first() != Some(&f64::INFINITY) {
        out.push(point(f64::INFINITY));
    }
    out.extend(thresholds.iter().map(|&t| point(t)));
    if thresholds.last() != Some(&f64::NEG_INFINITY) {
        out.push(point(f64::NEG_INFINITY));
    }
    Ok(out)
}

/// Area under a curve given by points ordered by non-decreasing FPR.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from midranks of the pooled sample.
pub fn auc(pos: &[f64], neg: &[f64]) -> Result<f64, EvalError> {
    check(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Actual `(fpr, tpr)` on raw detector scores under the threshold's rule.
pub fn rates_at_threshold(pos: &[f64], neg: &[f64], th: &CalibratedThreshold) -> Result<(f64, f64), EvalError> {
    check(pos, neg)?;
    Ok(rates(pos, neg, th))
}

fn rates(pos: &[f64], neg: &[f64], th: &CalibratedThreshold) -> (f64, f64) {
    let frac = |xs: &[f64]| xs.iter().filter(|s| th.is_ai(**s)).count() as f64 / xs.len() as f64;
    (frac(neg), frac(pos))
}

pub const DEFAULT_RESAMPLES: usize = 100;

/// Sample standard deviation (n − 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// One bootstrap replicate: negatives, then positives, each resampled with
/// replacement at its own size. Replicate `r` draws from ChaCha20 stream `r`
/// of `seed`, so replicates are independent of evaluation order.
pub fn bootstrap_replicate(pos: &[f64], neg: &[f64], th: &CalibratedThreshold, seed: u64, r: u64) -> (f64, f64) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(r);
    let neg_s: Vec<f64> = (0..neg.len()).map(|_| neg[rng.gen_range(0..neg.len())]).collect();
    let pos_s: Vec<f64> = (0..pos.len()).map(|_| pos[rng.gen_range(0..pos.len())]).collect();
    rates(&pos_s, &neg_s, th)
}

/// Bootstrap standard deviations `(fpr_sd, tpr_sd)` of the actual rates.
pub fn bootstrap_uncertainty(
    pos: &[f64],
    neg: &[f64],
    th: &CalibratedThreshold,
    n_resamples: usize,
    seed: u64,
) -> Result<(f64, f64), EvalError> {
    check(pos, neg)?;
    if n_resamples < 2 {
        return Err(EvalError::TooFewResamples(n_resamples));
    }
    let reps: Vec<(f64, f64)> =
        (0..n_resamples as u64).into_par_iter().map(|r| bootstrap_replicate(pos, neg, th, seed, r)).collect();
    let fprs: Vec<f64> = reps.iter().map(|r| r.0).collect();
    let tprs: Vec<f64> = reps.iter().map(|r| r.1).collect();
    Ok((sample_sd(&fprs), sample_sd(&tprs)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Orientation;
    use proptest::prelude::*;

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

    fn pairwise(pos: &[f64], neg: &[f64]) -> f64 {
        let mut s = 0.0;
        for p in pos {
            for n in neg {
                s += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        s / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn perfect_separation() {
        let roc = roc_curve(&[2.0, 3.0], &[0.0, 1.0]).unwrap();
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&[2.0, 3.0], &[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn identical_lists_are_diagonal() {
        let s = [0.1, 0.5, 0.5, 0.9];
        let roc = roc_curve(&s, &s).unwrap();
        assert!(roc.iter().all(|p| p.fpr == p.tpr));
        assert_eq!(auc(&s, &s).unwrap(), 0.5);
    }

    #[test]
    fn interleaved_example() {
        let roc = roc_curve(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        let pts: Vec<(f64, f64, f64)> = roc.iter().map(|p| (p.threshold, p.fpr, p.tpr)).collect();
        assert_eq!(
            pts,
            vec![
                (f64::INFINITY, 0.0, 0.0),
                (4.0, 0.0, 0.0),
                (3.0, 0.5, 0.0),
                (2.0, 0.5, 0.5),
                (1.0, 1.0, 0.5),
                (f64::NEG_INFINITY, 1.0, 1.0),
            ]
        );
        assert_eq!(auc(&[1.0, 3.0], &[2.0, 4.0]).unwrap(), 0.25);
        assert_eq!(trapezoid_area(&roc), 0.25);
    }

    #[test]
    fn rates_examples() {
        let (p, n) = ([0.9, 0.4], [0.3, 0.6]);
        assert_eq!(rates_at_threshold(&p, &n, &th(0.5)).unwrap(), (0.5, 0.5));
        assert_eq!(rates_at_threshold(&p, &n, &th(10.0)).unwrap(), (0.0, 0.0));
        assert_eq!(rates_at_threshold(&p, &n, &th(-10.0)).unwrap(), (1.0, 1.0));
        assert!(matches!(rates_at_threshold(&[], &n, &th(0.5)), Err(EvalError::EmptyScores)));
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let (sf, st) = bootstrap_uncertainty(&[1.0; 5], &[0.0; 7], &th(0.5), 50, 3).unwrap();
        assert_eq!((sf, st), (0.0, 0.0));
        let pos: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let neg: Vec<f64> = (0..10).map(|i| i as f64 / 20.0).collect();
        let a = bootstrap_uncertainty(&pos, &neg, &th(0.3), 100, 42).unwrap();
        let b = bootstrap_uncertainty(&pos, &neg, &th(0.3), 100, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.0 > 0.0 && a.1 > 0.0);
        assert!(matches!(bootstrap_uncertainty(&pos, &neg, &th(0.3), 1, 42), Err(EvalError::TooFewResamples(1))));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_and_trapezoid(
            pos in prop::collection::vec(0i32..20, 1..40),
            neg in prop::collection::vec(0i32..20, 1..40),
        ) {
            let pos: Vec<f64> = pos.iter().map(|v| *v as f64 * 0.25).collect();
            let neg: Vec<f64> = neg.iter().map(|v| *v as f64 * 0.25).collect();
            let a = auc(&pos, &neg).unwrap();
            prop_assert!((a - pairwise(&pos, &neg)).abs() < 1e-12);
            let roc = roc_curve(&pos, &neg).unwrap();
            prop_assert!((a - trapezoid_area(&roc)).abs() < 1e-12);
            prop_assert!((a + auc(&neg, &pos).unwrap() - 1.0).abs() < 1e-12);
            prop_assert!(roc.windows(2).all(|w| w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr));
        }

        #[test]
        fn rates_monotone_in_theta(
            pos in prop::collection::vec(-10.0f64..10.0, 1..30),
            neg in prop::collection::vec(-10.0f64..10.0, 1..30),
            a in -12.0f64..12.0,
            b in -12.0f64..12.0,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (f1, t1) = rates_at_threshold(&pos, &neg, &th(lo)).unwrap();
            let (f2, t2) = rates_at_threshold(&pos, &neg, &th(hi)).unwrap();
            prop_assert!(f2 <= f1 && t2 <= t1);
        }
    }
}

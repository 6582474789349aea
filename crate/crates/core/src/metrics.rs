//! Zero-shot metric detectors over per-token scorer statistics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::providers::{self, CrossScorer, ProviderError, TokenScore, TokenScorer, DEFAULT_MIN_TOKENS};
use crate::score::{DetectionScore, Orientation};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("token stream has {got} tokens, need at least {min}")]
    TooShort { got: usize, min: usize },
    #[error("every token has rank 1, so the mean log-rank is zero")]
    DegenerateRanks,
    #[error("cross stream has zero mean log probability")]
    ZeroCrossEntropy,
    #[error("unknown detector '{0}'")]
    UnknownDetector(String),
    #[error("detector '{0}' needs a scorer pair")]
    MissingCrossScorer(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricDetector {
    Loglikelihood,
    Rank,
    Logrank,
    Entropy,
    GltrTop10,
    Llr,
    Binoculars,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerRequirement {
    OneScorer,
    ScorerPair,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub detector_id: String,
    pub orientation: Orientation,
    pub requires: ScorerRequirement,
    pub description: String,
}

impl MetricDetector {
    pub const ALL: [MetricDetector; 7] = [
        MetricDetector::Loglikelihood,
        MetricDetector::Rank,
        MetricDetector::Logrank,
        MetricDetector::Entropy,
        MetricDetector::GltrTop10,
        MetricDetector::Llr,
        MetricDetector::Binoculars,
    ];

    pub fn id(self) -> &'static str {
        match self {
            MetricDetector::Loglikelihood => "loglikelihood",
            MetricDetector::Rank => "rank",
            MetricDetector::Logrank => "logrank",
            MetricDetector::Entropy => "entropy",
            MetricDetector::GltrTop10 => "gltr_top10",
            MetricDetector::Llr => "llr",
            MetricDetector::Binoculars => "binoculars",
        }
    }

    pub fn orientation(self) -> Orientation {
        match self {
            MetricDetector::Loglikelihood | MetricDetector::GltrTop10 | MetricDetector::Llr => Orientation::HigherIsAi,
            MetricDetector::Rank | MetricDetector::Logrank | MetricDetector::Entropy | MetricDetector::Binoculars => {
                Orientation::LowerIsAi
            }
        }
    }

    pub fn requires(self) -> ScorerRequirement {
        match self {
            MetricDetector::Binoculars => ScorerRequirement::ScorerPair,
            _ => ScorerRequirement::OneScorer,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            MetricDetector::Loglikelihood => "mean token log probability",
            MetricDetector::Rank => "mean token rank",
            MetricDetector::Logrank => "mean natural log of token rank",
            MetricDetector::Entropy => "mean next-token entropy",
            MetricDetector::GltrTop10 => "fraction of tokens ranked within the top 10",
            MetricDetector::Llr => "|mean log probability| / mean log rank",
            MetricDetector::Binoculars => "observer log perplexity / cross log perplexity",
        }
    }

    pub fn spec(self) -> DetectorSpec {
        DetectorSpec {
            detector_id: self.id().to_string(),
            orientation: self.orientation(),
            requires: self.requires(),
            description: self.description().to_string(),
        }
    }

    /// Score from one token stream. Fails for the pair-based detector.
    pub fn score_stream(self, ts: &[TokenScore]) -> Result<f64, MetricError> {
        match self {
            MetricDetector::Loglikelihood => loglikelihood_score(ts),
            MetricDetector::Rank => rank_score(ts),
            MetricDetector::Logrank => logrank_score(ts),
            MetricDetector::Entropy => entropy_score(ts),
            MetricDetector::GltrTop10 => gltr_score(ts),
            MetricDetector::Llr => llr_score(ts),
            MetricDetector::Binoculars => Err(MetricError::MissingCrossScorer(self.id().into())),
        }
    }
}

impl fmt::Display for MetricDetector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for MetricDetector {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricDetector::ALL
            .into_iter()
            .find(|d| d.id() == s)
            .ok_or_else(|| MetricError::UnknownDetector(s.to_string()))
    }
}

/// All metric detectors with their fixed orientations.
pub fn registry() -> Vec<DetectorSpec> {
    MetricDetector::ALL.into_iter().map(MetricDetector::spec).collect()
}

fn mean(ts: &[TokenScore], f: impl Fn(&TokenScore) -> f64) -> Result<f64, MetricError> {
    if ts.is_empty() {
        return Err(MetricError::TooShort { got: 0, min: 1 });
    }
    Ok(ts.iter().map(f).sum::<f64>() / ts.len() as f64)
}

pub fn loglikelihood_score(ts: &[TokenScore]) -> Result<f64, MetricError> {
    mean(ts, |t| t.logprob)
}

pub fn rank_score(ts: &[TokenScore]) -> Result<f64, MetricError> {
    mean(ts, |t| t.rank as f64)
}

pub fn logrank_score(ts: &[TokenScore]) -> Result<f64, MetricError> {
    mean(ts, |t| (t.rank as f64).ln())
}

pub fn entropy_score(ts: &[TokenScore]) -> Result<f64, MetricError> {
    mean(ts, |t| t.entropy)
}

pub const GLTR_TOP_K: u64 = 10;

pub fn gltr_score(ts: &[TokenScore]) -> Result<f64, MetricError> {
    mean(ts, |t| if t.rank <= GLTR_TOP_K { 1.0 } else { 0.0 })
}

pub fn llr_score(ts: &[TokenScore]) -> Result<f64, MetricError> {
    let ll = loglikelihood_score(ts)?;
    let lr = logrank_score(ts)?;
    if lr == 0.0 {
        return Err(MetricError::DegenerateRanks);
    }
    Ok(ll.abs() / lr)
}

pub fn binoculars_score(observer_ts: &[TokenScore], cross_ts: &[TokenScore]) -> Result<f64, MetricError> {
    let num = -loglikelihood_score(observer_ts)?;
    let den = -loglikelihood_score(cross_ts)?;
    if den == 0.0 {
        return Err(MetricError::ZeroCrossEntropy);
    }
    Ok(num / den)
}

/// Scores texts with metric detectors. Each text is scored once per
/// provider; every single-scorer detector reuses that stream.
pub struct MetricScorer<'a> {
    scorer: Option<&'a dyn TokenScorer>,
    cross: Option<&'a dyn CrossScorer>,
    min_tokens: usize,
}

impl<'a> MetricScorer<'a> {
    pub fn new(scorer: Option<&'a dyn TokenScorer>, cross: Option<&'a dyn CrossScorer>) -> Self {
        Self { scorer, cross, min_tokens: DEFAULT_MIN_TOKENS }
    }

    pub fn with_min_tokens(mut self, min_tokens: usize) -> Self {
        self.min_tokens = min_tokens;
        self
    }

    fn too_short(e: ProviderError) -> MetricError {
        match e {
            ProviderError::TooShort { got, min } => MetricError::TooShort { got, min },
            other => MetricError::Provider(other),
        }
    }

    /// One score per requested detector, in order. An all-rank-1 stream
    /// gives the log-rank ratio detector a `+inf` score, which always
    /// classifies as AI and is written as `inf` in score files.
    pub fn score_text(
        &self,
        detectors: &[MetricDetector],
        review_id: &str,
        text: &str,
    ) -> Vec<Result<DetectionScore, MetricError>> {
        let needs_single = detectors.iter().any(|d| d.requires() == ScorerRequirement::OneScorer);
        let stream = if needs_single {
            Some(match self.scorer {
                Some(s) => providers::token_scores(s, text, self.min_tokens).map_err(Self::too_short),
                None => Err(MetricError::Provider(ProviderError::Config("no token scorer configured".into()))),
            })
        } else {
            None
        };
        detectors
            .iter()
            .map(|&d| {
                let raw = match d.requires() {
                    ScorerRequirement::OneScorer => {
                        let ts = stream.as_ref().expect("stream computed").as_ref().map_err(Clone::clone)?;
                        match d.score_stream(ts) {
                            Err(MetricError::DegenerateRanks) => {
                                log::warn!("{review_id}: all tokens rank 1; {} score set to +inf", d.id());
                                f64::INFINITY
                            }
                            other => other?,
                        }
                    }
                    ScorerRequirement::ScorerPair => self.binoculars(text)?,
                };
                Ok(DetectionScore {
                    detector_id: d.id().to_string(),
                    review_id: review_id.to_string(),
                    raw,
                    orientation: d.orientation(),
                })
            })
            .collect()
    }

    fn binoculars(&self, text: &str) -> Result<f64, MetricError> {
        let cross = self.cross.ok_or_else(|| MetricError::MissingCrossScorer("binoculars".into()))?;
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyInput.into());
        }
        let streams = cross.cross_streams(text)?;
        providers::check_stream(&streams.observer, self.min_tokens).map_err(Self::too_short)?;
        providers::check_stream(&streams.cross, self.min_tokens).map_err(Self::too_short)?;
        binoculars_score(&streams.observer, &streams.cross)
    }

    /// Scores many `(review_id, text)` pairs in parallel; output order
    /// follows the input.
    pub fn score_all(
        &self,
        detectors: &[MetricDetector],
        reviews: &[(String, String)],
    ) -> Vec<Vec<Result<DetectionScore, MetricError>>> {
        reviews.par_iter().map(|(id, text)| self.score_text(detectors, id, text)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::mock::{LexiconScorer, ScriptedScorer};
    use crate::providers::ScorerPair;
    use proptest::prelude::*;

    fn lp(xs: &[f64]) -> Vec<TokenScore> {
        xs.iter().map(|&l| TokenScore::new("t", l, 1, 0.0)).collect()
    }

    fn ranks(rs: &[u64]) -> Vec<TokenScore> {
        rs.iter().map(|&r| TokenScore::new("t", -1.0, r, 0.0)).collect()
    }

    #[test]
    fn orientations_are_fixed() {
        use Orientation::*;
        let expected = [
            ("loglikelihood", HigherIsAi),
            ("rank", LowerIsAi),
            ("logrank", LowerIsAi),
            ("entropy", LowerIsAi),
            ("gltr_top10", HigherIsAi),
            ("llr", HigherIsAi),
            ("binoculars", LowerIsAi),
        ];
        for (id, o) in expected {
            assert_eq!(id.parse::<MetricDetector>().unwrap().orientation(), o, "{id}");
        }
        assert_eq!(registry().len(), 7);
        assert!("detectgpt".parse::<MetricDetector>().is_err());
    }

    #[test]
    fn loglikelihood_examples() {
        assert_eq!(loglikelihood_score(&lp(&[-1.0])).unwrap(), -1.0);
        assert_eq!(loglikelihood_score(&lp(&[-1.0, -3.0])).unwrap(), -2.0);
        assert_eq!(loglikelihood_score(&lp(&[0.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(loglikelihood_score(&[]), Err(MetricError::TooShort { .. })));
    }

    #[test]
    fn rank_and_logrank_examples() {
        assert_eq!(rank_score(&ranks(&[1, 1, 1])).unwrap(), 1.0);
        assert_eq!(rank_score(&ranks(&[1, 3])).unwrap(), 2.0);
        assert_eq!(rank_score(&ranks(&[10, 10, 10])).unwrap(), 10.0);
        assert_eq!(logrank_score(&ranks(&[1, 1])).unwrap(), 0.0);
        // ln 1 = 0, ln 7 = 1.945910149055313...
        assert!((logrank_score(&ranks(&[1, 7])).unwrap() - 1.945_910_149_055_313_3 / 2.0).abs() < 1e-12);
        // ln 3 = 1.0986122886681098
        assert!((logrank_score(&ranks(&[3, 3])).unwrap() - 1.098_612_288_668_109_8).abs() < 1e-12);
    }

    #[test]
    fn entropy_and_gltr_examples() {
        let uniform2: Vec<TokenScore> = (0..4).map(|_| TokenScore::new("t", -std::f64::consts::LN_2, 1, std::f64::consts::LN_2)).collect();
        assert!((entropy_score(&uniform2).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let e02 = vec![TokenScore::new("a", -1.0, 1, 0.0), TokenScore::new("b", -1.0, 1, 2.0)];
        assert_eq!(entropy_score(&e02).unwrap(), 1.0);
        assert_eq!(entropy_score(&ranks(&[1, 2])).unwrap(), 0.0);
        assert_eq!(gltr_score(&ranks(&[1, 10, 3])).unwrap(), 1.0);
        assert_eq!(gltr_score(&ranks(&[11, 100])).unwrap(), 0.0);
        assert_eq!(gltr_score(&ranks(&[1, 5, 50, 500])).unwrap(), 0.5);
    }

    #[test]
    fn llr_examples() {
        let ts = vec![TokenScore::new("a", -2.0, 3, 0.0), TokenScore::new("b", -2.0, 3, 0.0)];
        assert!((llr_score(&ts).unwrap() - 2.0 / 1.098_612_288_668_109_8).abs() < 1e-12);
        assert_eq!(llr_score(&ranks(&[1, 1])), Err(MetricError::DegenerateRanks));
        assert_eq!(llr_score(&[TokenScore::new("a", 0.0, 7, 0.0)]).unwrap(), 0.0);
    }

    #[test]
    fn binoculars_examples() {
        let a = lp(&[-1.0, -3.0]);
        assert_eq!(binoculars_score(&a, &a).unwrap(), 1.0);
        assert_eq!(binoculars_score(&lp(&[-2.0, -2.0]), &lp(&[-4.0, -4.0])).unwrap(), 0.5);
        assert_eq!(binoculars_score(&a, &lp(&[0.0, 0.0])), Err(MetricError::ZeroCrossEntropy));
    }

    #[test]
    fn scorer_pipeline_applies_min_tokens_and_sentinel() {
        let text = "a b c d e f g h i j";
        let ones: Vec<TokenScore> = (0..10).map(|i| TokenScore::new(i.to_string(), -0.5, 1, 0.1)).collect();
        let s = ScriptedScorer::new("m").with_script(text, ones.clone()).with_script("short", ones[..3].to_vec());
        let m = MetricScorer::new(Some(&s), None);
        let out = m.score_text(&[MetricDetector::Llr, MetricDetector::Rank], "r", text);
        assert_eq!(out[0].as_ref().unwrap().raw, f64::INFINITY);
        assert_eq!(out[1].as_ref().unwrap().raw, 1.0);
        let short = m.score_text(&[MetricDetector::Entropy], "r", "short");
        assert_eq!(short[0], Err(MetricError::TooShort { got: 3, min: 10 }));
        let bino = m.score_text(&[MetricDetector::Binoculars], "r", text);
        assert!(matches!(bino[0], Err(MetricError::MissingCrossScorer(_))));
    }

    #[test]
    fn binoculars_through_scorer_pair() {
        let text = "one two three four five six seven eight nine ten eleven";
        let pair = ScorerPair::new(LexiconScorer::new("obs"), LexiconScorer::new("obs"));
        let m = MetricScorer::new(None, Some(&pair));
        let out = m.score_all(&[MetricDetector::Binoculars], &[("r".into(), text.into())]);
        assert!((out[0][0].as_ref().unwrap().raw - 1.0).abs() < 1e-15);
    }

    fn token_strategy() -> impl Strategy<Value = TokenScore> {
        (-20.0f64..0.0, 1u64..5000, 0.0f64..10.0).prop_map(|(l, r, e)| TokenScore::new("t", l, r, e))
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_bounded(ts in prop::collection::vec(token_strategy(), 1..40), seed in any::<u64>()) {
            let mut shuffled = ts.clone();
            // Deterministic Fisher-Yates from the seed.
            let mut x = seed | 1;
            for i in (1..shuffled.len()).rev() {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                shuffled.swap(i, (x % (i as u64 + 1)) as usize);
            }
            for d in MetricDetector::ALL.into_iter().filter(|d| *d != MetricDetector::Binoculars) {
                match (d.score_stream(&ts), d.score_stream(&shuffled)) {
                    (Ok(a), Ok(b)) => prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0)),
                    (a, b) => prop_assert_eq!(a, b),
                }
            }
            let g = gltr_score(&ts).unwrap();
            prop_assert!((0.0..=1.0).contains(&g));
            prop_assert!(rank_score(&ts).unwrap() >= 1.0);
            prop_assert!(entropy_score(&ts).unwrap() >= 0.0);
            prop_assert!(logrank_score(&ts).unwrap() >= 0.0);
            let b1 = binoculars_score(&ts, &shuffled).unwrap();
            let b2 = binoculars_score(&shuffled, &ts).unwrap();
            prop_assert!((b1 - 1.0).abs() < 1e-12 && (b2 - 1.0).abs() < 1e-12);
        }
    }
}

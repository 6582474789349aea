use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Corpus, ReviewRecord};

/// A human and an AI review of the same paper that share a recommendation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReview {
    pub paper_id: String,
    pub recommendation: String,
    pub human: ReviewRecord,
    pub ai: ReviewRecord,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairingReport {
    pub pairs: Vec<PairedReview>,
    pub unmatched_ai: Vec<String>,
    pub unmatched_human: Vec<String>,
    /// Number of pairs each AI review took part in (only entries > 1).
    pub ai_multiplicity: BTreeMap<String, usize>,
}

/// Matches every AI review with every human review of the same paper
/// (and conference-year) whose recommendation string is identical after
/// trimming. Reviews without a recommendation never match.
pub fn pair_reviews(corpus: &Corpus) -> PairingReport {
    type Key<'a> = (&'a str, u16, &'a str, &'a str);
    let mut humans: BTreeMap<Key, Vec<&ReviewRecord>> = BTreeMap::new();
    for h in corpus.humans() {
        if let Some(rec) = &h.recommendation {
            humans
                .entry((h.conference.as_str(), h.year, h.paper_id.as_str(), rec.trim()))
                .or_default()
                .push(h);
        }
    }

    let mut report = PairingReport::default();
    let mut matched_humans = BTreeSet::new();
    for ai in corpus.ai() {
        let matches = ai
            .recommendation
            .as_ref()
            .and_then(|rec| humans.get(&(ai.conference.as_str(), ai.year, ai.paper_id.as_str(), rec.trim())));
        match matches {
            Some(hs) => {
                for h in hs {
                    matched_humans.insert(h.review_id.as_str());
                    report.pairs.push(PairedReview {
                        paper_id: ai.paper_id.clone(),
                        recommendation: ai.recommendation.clone().unwrap_or_default().trim().to_string(),
                        human: (*h).clone(),
                        ai: ai.clone(),
                    });
                }
                if hs.len() > 1 {
                    report.ai_multiplicity.insert(ai.review_id.clone(), hs.len());
                }
            }
            None => report.unmatched_ai.push(ai.review_id.clone()),
        }
    }
    report.unmatched_human = corpus
        .humans()
        .filter(|h| !matched_humans.contains(h.review_id.as_str()))
        .map(|h| h.review_id.clone())
        .collect();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{FieldValue, Source, Subset};

    fn rec(id: &str, paper: &str, source: Source, recommendation: &str) -> ReviewRecord {
        ReviewRecord {
            review_id: id.into(),
            paper_id: paper.into(),
            conference: "ICLR".into(),
            year: 2022,
            subset: Subset::Test,
            source,
            dataset_llm: "gpt-4o".into(),
            fields: [("review".to_string(), FieldValue::Text(id.into()))].into_iter().collect(),
            recommendation: Some(recommendation.into()),
            archetype: None,
            prompt_hash: None,
        }
    }

    fn ai() -> Source {
        Source::Llm("gpt-4o".into())
    }

    #[test]
    fn matching_recommendation_pairs() {
        let c = Corpus::new(vec![rec("h", "p1", Source::Human, "accept"), rec("a", "p1", ai(), "accept")]);
        let r = pair_reviews(&c);
        assert_eq!(r.pairs.len(), 1);
        assert!(r.unmatched_ai.is_empty() && r.unmatched_human.is_empty());
    }

    #[test]
    fn mismatched_recommendation_does_not_pair() {
        let c = Corpus::new(vec![rec("h", "p1", Source::Human, "accept"), rec("a", "p1", ai(), "reject")]);
        let r = pair_reviews(&c);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_ai, vec!["a"]);
        assert_eq!(r.unmatched_human, vec!["h"]);
    }

    #[test]
    fn two_by_two_gives_two_pairs() {
        let c = Corpus::new(vec![
            rec("h1", "p1", Source::Human, "accept"),
            rec("h2", "p1", Source::Human, "reject"),
            rec("a1", "p1", ai(), "accept"),
            rec("a2", "p1", ai(), "reject"),
        ]);
        let r = pair_reviews(&c);
        let ids: Vec<(&str, &str)> =
            r.pairs.iter().map(|p| (p.human.review_id.as_str(), p.ai.review_id.as_str())).collect();
        assert_eq!(ids, vec![("h1", "a1"), ("h2", "a2")]);
    }

    #[test]
    fn many_to_many_reports_multiplicity() {
        let c = Corpus::new(vec![
            rec("h1", "p1", Source::Human, "accept"),
            rec("h2", "p1", Source::Human, "accept"),
            rec("a1", "p1", ai(), "accept"),
            rec("a2", "p2", ai(), "accept"),
        ]);
        let r = pair_reviews(&c);
        assert_eq!(r.pairs.len(), 2);
        assert_eq!(r.ai_multiplicity.get("a1"), Some(&2));
        assert_eq!(r.unmatched_ai, vec!["a2"]);
        for p in &r.pairs {
            assert!(p.human.source.is_human() && !p.ai.source.is_human());
            assert_eq!(p.human.paper_id, p.ai.paper_id);
        }
    }
}

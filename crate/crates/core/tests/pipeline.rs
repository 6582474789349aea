//! Library-level pipeline: batch generation into the dataset layout, pairing,
//! anchor scoring, calibration and evaluation, all with offline mocks.

use revdetect::anchor::AnchorGenerator;
use revdetect::calibration::calibrate_detector;
use revdetect::corpus::{
    canonical_text, load_dataset, pair_reviews, write_dataset, FieldValue, LoadFilter, LoadOptions, ReviewRecord,
    SchemaRegistry, Source, Subset,
};
use revdetect::evaluation::evaluate_detector;
use revdetect::genpipe::{run_batch, AssetRegistry, BatchOptions, GenerationJob, Generator, Ledger};
use revdetect::providers::mock::{HashEmbedder, MockChat};
use revdetect::providers::{embed, Embedder};
use revdetect::score::Orientation;

const DECISIONS: [&str; 2] = ["accept, good paper", "marginally below the acceptance threshold"];

fn words(seed: usize, n: usize) -> String {
    (0..n).map(|i| format!("w{}", (seed * 7919 + i * 104_729) % 3000)).collect::<Vec<_>>().join(" ")
}

fn human(id: &str, paper: &str, subset: Subset, text: &str, decision: &str) -> ReviewRecord {
    let schemas = SchemaRegistry::bundled();
    let schema = schemas.require("ICLR", 2022).unwrap();
    let mut fields = indexmap::IndexMap::new();
    for f in &schema.field_names {
        let v = if schema.is_numeric(f) {
            FieldValue::Number(3.0)
        } else if f == "recommendation" {
            FieldValue::Text(decision.into())
        } else {
            FieldValue::Text(text.into())
        };
        fields.insert(f.clone(), v);
    }
    ReviewRecord {
        review_id: id.into(),
        paper_id: paper.into(),
        conference: "ICLR".into(),
        year: 2022,
        subset,
        source: Source::Human,
        dataset_llm: "gpt-4o".into(),
        fields,
        recommendation: Some(decision.into()),
        archetype: None,
        prompt_hash: None,
    }
}

#[test]
fn generated_corpus_scores_calibrates_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let schemas = SchemaRegistry::bundled();
    let assets = AssetRegistry::bundled();
    let chat = MockChat::synthetic("gpt-4o", 1);
    let generator = Generator::new("gpt-4o", &chat, &assets, &schemas);

    let papers: Vec<(String, String)> = (0..12).map(|p| (format!("paper{p}"), words(p, 200))).collect();
    let mut records = Vec::new();
    let mut jobs = Vec::new();
    for (p, (id, text)) in papers.iter().enumerate() {
        let decision = DECISIONS[p % 2];
        records.push(human(&format!("h{p}"), id, Subset::Test, &words(1000 + p, 90), decision));
        jobs.push(GenerationJob::review("gpt-4o", id, "ICLR", 2022, Subset::Test, decision, text.clone(), 0));
        for k in 0..3 {
            records.push(human(&format!("c{p}-{k}"), id, Subset::Calibration, &words(2000 + p * 3 + k, 90), decision));
        }
    }
    let opts = BatchOptions::new(dir.path().join("ledger.jsonl"));
    let report = run_batch(&jobs, |j| generator.execute(j), &opts).unwrap();
    assert_eq!((report.done, report.failed), (12, 0));
    records.extend(Ledger::load(&opts.ledger).unwrap().records());

    let data = dir.path().join("data");
    write_dataset(&data, &records, &schemas).unwrap();
    let load = |subset| {
        let filter = LoadFilter { subset: Some(subset), ..LoadFilter::default() };
        load_dataset(&data, &filter, &LoadOptions::default(), &schemas).unwrap().0
    };
    let (test, calibration) = (load(Subset::Test), load(Subset::Calibration));
    assert_eq!((test.len(), calibration.len()), (24, 36));

    let pairing = pair_reviews(&test);
    assert_eq!(pairing.pairs.len(), 12);
    assert!(pairing.unmatched_ai.is_empty() && pairing.unmatched_human.is_empty());

    let embedder = HashEmbedder::new(256, 3);
    let anchors = AnchorGenerator::new("gpt-4o", &chat, &embedder).generate_all(&papers);
    let anchor = |paper: &str| {
        let i = papers.iter().position(|(id, _)| id == paper).unwrap();
        anchors[i].as_ref().unwrap()
    };
    let score = |r: &ReviewRecord| {
        let e = embed(&embedder as &dyn Embedder, &canonical_text(r).unwrap()).unwrap();
        revdetect::anchor::cosine_similarity(&anchor(&r.paper_id).embedding, &e).unwrap()
    };
    let cal: Vec<f64> = calibration.records.iter().map(score).collect();
    let th = calibrate_detector("anchor/gpt-4o", Orientation::HigherIsAi, &cal, 0.1, "ICLR-subset").unwrap();
    assert!(th.achieved_calibration_fpr <= 0.1);

    let pos: Vec<f64> = test.ai().map(score).collect();
    let neg: Vec<f64> = test.humans().map(score).collect();
    let rep = evaluate_detector("anchor/gpt-4o", Orientation::HigherIsAi, &pos, &neg, &[th], 20, 5).unwrap();
    assert_eq!(rep.auc, 1.0);
    assert_eq!(rep.rows[0].actual_tpr, 1.0);
}

#[test]
fn canonical_text_lists_text_fields_in_schema_order() {
    let r = human("h", "p", Subset::Test, "Body.", "accept, good paper");
    let text = canonical_text(&r).unwrap();
    let expected = "summary of the paper:\nBody.\n\nmain review:\nBody.\n\nsummary of the review:\nBody.\n\n\
                    flag for ethics review:\nBody.\n\nrecommendation:\naccept, good paper";
    assert_eq!(text, expected);
}

//! Subcommand implementations. Each returns the manifest record of the run;
//! `hard_errors > 0` makes the process exit nonzero.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use revdetect::anchor::{anchor_detector_id, anchor_score_embedded, AnchorGenerator, AnchorStore, VotingEnsemble};
use revdetect::calibration::{calibrate_detector, calibrate_voting, CalibratedThreshold, ThresholdFile};
use revdetect::corpus::{canonical_text, pair_reviews, validate_record, write_dataset, Corpus, Subset};
use revdetect::evaluation::{
    edit_ranking_ndcg, edit_similarity_check, evaluate_detector, flag_rate_by_level, histogram_svg, roc_svg,
    score_difference_summary, write_histogram_csv, write_roc_csv, write_table_csv, EditLevelSet, EditedReview,
    EvaluationReport, FlagRates, ScoreDifferenceSummary,
};
use revdetect::genpipe::{run_batch, AssetRegistry, BatchOptions, BatchReport, GenerationJob, Generator, Ledger};
use revdetect::metrics::{MetricDetector, MetricError, MetricScorer};
use revdetect::prompts::{Archetype, EditLevel};
use revdetect::providers::{self, EmbeddingVector};
use revdetect::score::{read_scores_csv, write_scores_csv, DetectionScore, Orientation};

use crate::run::{rel, write_json, write_text, CommandRecord, Provenance, Run};
use crate::wiring::{sanitize, Providers};

/// Detectors requested by the configuration.
pub struct Selection {
    pub metrics: Vec<MetricDetector>,
    pub anchors: Vec<String>,
}

pub fn selection(run: &Run) -> Result<Selection> {
    let mut metrics = Vec::new();
    let mut anchors = Vec::new();
    for d in &run.cfg.detectors {
        if d == "anchor" {
            anchors.extend(run.cfg.anchor_llms.iter().cloned());
        } else if let Some(llm) = d.strip_prefix("anchor/") {
            anchors.push(llm.to_string());
        } else {
            metrics.push(d.parse::<MetricDetector>().map_err(|e| anyhow::anyhow!("{e}"))?);
        }
    }
    let mut seen = BTreeSet::new();
    anchors.retain(|a| seen.insert(a.clone()));
    metrics.dedup();
    Ok(Selection { metrics, anchors })
}

struct Item {
    review_id: String,
    paper_id: String,
    text: String,
}

#[derive(Default)]
struct Scored {
    by_detector: BTreeMap<String, Vec<DetectionScore>>,
    hard: usize,
    soft: usize,
}

impl Scored {
    fn hard(&mut self, what: impl std::fmt::Display) {
        eprintln!("error: {what}");
        self.hard += 1;
    }
}

/// Builds anchors for the papers of `items` and scores every item with the
/// selected detectors.
fn score_items(run: &Run, prov: &Providers, sel: &Selection, items: &[Item]) -> Result<Scored> {
    let mut out = Scored::default();
    if !sel.anchors.is_empty() {
        let embedder = prov.embedder()?;
        let store = AnchorStore::new(run.out("anchors"));
        let papers: BTreeSet<&str> = items.iter().map(|i| i.paper_id.as_str()).collect();
        let mut texts = Vec::new();
        for p in papers {
            match run.paper_text(p) {
                Ok(t) => texts.push((p.to_string(), t)),
                Err(e) => out.hard(format!("{e:#}")),
            }
        }
        let mut embeddings: BTreeMap<&str, EmbeddingVector> = BTreeMap::new();
        for it in items {
            match providers::embed(embedder, &it.text) {
                Ok(e) => {
                    embeddings.insert(&it.review_id, e);
                }
                Err(e) => out.hard(format!("{}: embedding failed: {e}", it.review_id)),
            }
        }
        for llm in &sel.anchors {
            let mut generator = AnchorGenerator::new(llm, prov.chat(llm)?, embedder).with_store(store.clone());
            if let Some(max) = run.cfg.max_manuscript_chars {
                generator = generator.with_max_manuscript_chars(max);
            }
            let mut anchors = BTreeMap::new();
            for ((paper_id, _), res) in texts.iter().zip(generator.generate_all(&texts)) {
                match res {
                    Ok(a) => {
                        anchors.insert(paper_id.clone(), a);
                    }
                    Err(e) => out.hard(format!("anchor {llm} for paper {paper_id}: {e}")),
                }
            }
            let scores = out.by_detector.entry(anchor_detector_id(llm)).or_default();
            let mut errs = Vec::new();
            for it in items {
                let (Some(a), Some(e)) = (anchors.get(&it.paper_id), embeddings.get(it.review_id.as_str())) else {
                    continue;
                };
                match anchor_score_embedded(&it.review_id, e, a) {
                    Ok(s) => scores.push(s),
                    Err(e) => errs.push(format!("{}: {e}", it.review_id)),
                }
            }
            errs.into_iter().for_each(|e| out.hard(e));
        }
    }
    if !sel.metrics.is_empty() {
        let scorer = MetricScorer::new(prov.scorer.as_deref(), prov.cross.as_deref()).with_min_tokens(run.cfg.min_tokens);
        let pairs: Vec<(String, String)> = items.iter().map(|i| (i.review_id.clone(), i.text.clone())).collect();
        for (it, results) in items.iter().zip(scorer.score_all(&sel.metrics, &pairs)) {
            for (d, r) in sel.metrics.iter().zip(results) {
                match r {
                    Ok(s) => out.by_detector.entry(d.id().to_string()).or_default().push(s),
                    Err(MetricError::TooShort { got, min }) => {
                        log::warn!("{}: skipped by {}: {got} tokens < {min}", it.review_id, d.id());
                        out.soft += 1;
                    }
                    Err(e) => out.hard(format!("{}: {}: {e}", it.review_id, d.id())),
                }
            }
        }
    }
    Ok(out)
}

fn items_of(corpus: &Corpus) -> (Vec<Item>, Vec<String>) {
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for r in &corpus.records {
        match canonical_text(r) {
            Ok(text) => items.push(Item { review_id: r.review_id.clone(), paper_id: r.paper_id.clone(), text }),
            Err(e) => errors.push(e.to_string()),
        }
    }
    (items, errors)
}

fn score_file(run: &Run, subset: Subset, detector_id: &str) -> PathBuf {
    run.out(&format!("scores/{subset}/{}.csv", sanitize(detector_id)))
}

pub fn score(run: &Run, subset: Subset) -> Result<CommandRecord> {
    let sel = selection(run)?;
    let prov = run.build_providers()?;
    let corpus = run.load_corpus(Some(subset))?;
    let (items, errors) = items_of(&corpus);
    let mut scored = score_items(run, &prov, &sel, &items)?;
    errors.iter().for_each(|e| scored.hard(e));
    let mut rec = CommandRecord {
        command: format!("score-{subset}"),
        corpus_fingerprint: Some(corpus.fingerprint()),
        ..CommandRecord::default()
    };
    let ids: Vec<String> = sel
        .anchors
        .iter()
        .map(|a| anchor_detector_id(a))
        .chain(sel.metrics.iter().map(|m| m.id().to_string()))
        .collect();
    for id in ids {
        let scores = scored.by_detector.remove(&id).unwrap_or_default();
        let path = score_file(run, subset, &id);
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        write_scores_csv(File::create(&path)?, &scores)?;
        println!("{id}: {} scores -> {}", scores.len(), path.display());
        rec.counts.insert(id, scores.len());
        rec.outputs.push(rel(run, &path));
    }
    rec.provider_calls = prov.provider_calls();
    rec.hard_errors = scored.hard;
    rec.soft_errors = scored.soft;
    println!("provider calls: {}", rec.provider_calls);
    Ok(rec)
}

pub fn anchor(run: &Run) -> Result<CommandRecord> {
    let prov = run.build_providers()?;
    let embedder = prov.embedder()?;
    let papers = run.all_papers()?;
    let store = AnchorStore::new(run.out("anchors"));
    let mut rec = CommandRecord { command: "anchor".into(), ..CommandRecord::default() };
    for llm in &run.cfg.anchor_llms {
        let mut g = AnchorGenerator::new(llm, prov.chat(llm)?, embedder).with_store(store.clone());
        if let Some(max) = run.cfg.max_manuscript_chars {
            g = g.with_max_manuscript_chars(max);
        }
        let results = g.generate_all(&papers);
        let ok = results.iter().filter(|r| r.is_ok()).count();
        for ((id, _), r) in papers.iter().zip(&results) {
            if let Err(e) = r {
                eprintln!("error: anchor {llm} for paper {id}: {e}");
                rec.hard_errors += 1;
            }
        }
        println!("{llm}: {ok}/{} anchors", papers.len());
        rec.counts.insert(llm.clone(), ok);
    }
    rec.outputs.push(rel(run, store.dir()));
    rec.provider_calls = prov.provider_calls();
    Ok(rec)
}

fn read_scores(path: &Path) -> Result<Vec<DetectionScore>> {
    let f = File::open(path).with_context(|| format!("opening {} (run `score` first)", path.display()))?;
    read_scores_csv(f).with_context(|| format!("reading {}", path.display()))
}

/// Score files present for `subset`, keyed by detector id.
fn available_scores(run: &Run, subset: Subset) -> Result<BTreeMap<String, Vec<DetectionScore>>> {
    let sel = selection(run)?;
    let mut out = BTreeMap::new();
    let ids = sel.anchors.iter().map(|a| anchor_detector_id(a)).chain(sel.metrics.iter().map(|m| m.id().to_string()));
    for id in ids {
        out.insert(id.clone(), read_scores(&score_file(run, subset, &id))?);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ThresholdArtifact<'a> {
    provenance: Provenance,
    calibration_corpus_id: String,
    #[serde(flatten)]
    file: &'a ThresholdFile,
}

pub fn calibrate(run: &Run) -> Result<CommandRecord> {
    let filter = &run.cfg.calibration;
    let cal = filter.apply(&run.load_corpus(Some(Subset::Calibration))?);
    let keep: BTreeSet<&str> = cal.records.iter().map(|r| r.review_id.as_str()).collect();
    let corpus_id = filter.corpus_id();
    let fingerprint = cal.fingerprint();
    let mut file = ThresholdFile::default();
    let scores = available_scores(run, Subset::Calibration)?;
    let mut anchor_lists: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (id, list) in &scores {
        let kept: Vec<&DetectionScore> = list.iter().filter(|s| keep.contains(s.review_id.as_str())).collect();
        let raw: Vec<f64> = kept.iter().map(|s| s.raw).collect();
        let orientation = kept.first().map_or(Orientation::HigherIsAi, |s| s.orientation);
        for &t in &run.cfg.targets {
            let mut th = calibrate_detector(id, orientation, &raw, t, &corpus_id)
                .with_context(|| format!("calibrating {id} on {corpus_id} ({} reviews)", raw.len()))?;
            th.corpus_fingerprint = Some(fingerprint.clone());
            println!("{id} @ {t}: theta = {} (calibration FPR {:.4}, n = {})", th.theta, th.achieved_calibration_fpr, th.n_calibration);
            file.thresholds.push(th);
        }
        if let Some(llm) = id.strip_prefix("anchor/") {
            anchor_lists.insert(llm.to_string(), kept.iter().map(|s| (s.review_id.clone(), s.raw)).collect());
        }
    }
    if anchor_lists.len() > 1 {
        // Voting needs one score per anchor for the same reviews.
        let common: Vec<&String> = anchor_lists
            .values()
            .next()
            .expect("non-empty")
            .keys()
            .filter(|id| anchor_lists.values().all(|m| m.contains_key(*id)))
            .collect();
        let lists: BTreeMap<String, Vec<f64>> =
            anchor_lists.iter().map(|(llm, m)| (llm.clone(), common.iter().map(|id| m[*id]).collect())).collect();
        for &t in &run.cfg.targets {
            let e = calibrate_voting(&lists, t, &corpus_id)?;
            println!("{} @ {t}: quantile {:.4}, calibration FPR {:.4}", e.detector_id(), e.quantile_level, e.achieved_calibration_fpr);
            file.ensembles.push(e);
        }
    }
    let path = run.out("thresholds.json");
    let artifact = ThresholdArtifact { provenance: run.provenance(Some(&cal)), calibration_corpus_id: corpus_id, file: &file };
    write_json(&path, &artifact)?;
    Ok(CommandRecord {
        command: "calibrate".into(),
        corpus_fingerprint: Some(fingerprint),
        outputs: vec![rel(run, &path)],
        counts: BTreeMap::from([("calibration_reviews".to_string(), cal.len())]),
        ..CommandRecord::default()
    })
}

fn load_thresholds(run: &Run) -> Result<ThresholdFile> {
    let path = run.out("thresholds.json");
    let bytes = std::fs::read(&path).with_context(|| format!("reading {} (run `calibrate` first)", path.display()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Equivalent scalar thresholds of a voting ensemble, one per target.
fn ensemble_thresholds(ensembles: &[&VotingEnsemble]) -> Vec<CalibratedThreshold> {
    ensembles
        .iter()
        .map(|e| CalibratedThreshold {
            detector_id: e.detector_id(),
            target_fpr: e.target_fpr,
            theta: e.combined_threshold(),
            orientation: Orientation::HigherIsAi,
            achieved_calibration_fpr: e.achieved_calibration_fpr,
            calibration_corpus_id: e.members[0].threshold.calibration_corpus_id.clone(),
            n_calibration: e.members[0].threshold.n_calibration,
            corpus_fingerprint: e.members[0].threshold.corpus_fingerprint.clone(),
        })
        .collect()
}

#[derive(Serialize)]
struct EvaluationArtifact {
    provenance: Provenance,
    reports: Vec<EvaluationReport>,
}

pub fn evaluate(run: &Run, ai_llm: Option<&str>) -> Result<CommandRecord> {
    let test = run.load_corpus(Some(Subset::Test))?;
    let test = test.filtered(|r| r.source.is_human() || ai_llm.is_none_or(|l| r.dataset_llm == l));
    let is_human: BTreeMap<&str, bool> = test.records.iter().map(|r| (r.review_id.as_str(), r.source.is_human())).collect();
    let thresholds = load_thresholds(run)?;
    let scores = available_scores(run, Subset::Test)?;
    let split = |list: &[(String, f64)]| {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (id, s) in list {
            match is_human.get(id.as_str()) {
                Some(true) => neg.push(*s),
                Some(false) => pos.push(*s),
                None => {}
            }
        }
        (pos, neg)
    };
    let mut reports = Vec::new();
    let mut rec = CommandRecord { command: "evaluate".into(), corpus_fingerprint: Some(test.fingerprint()), ..Default::default() };
    for (id, list) in &scores {
        let ths: Vec<CalibratedThreshold> = thresholds.thresholds.iter().filter(|t| &t.detector_id == id).cloned().collect();
        if ths.is_empty() {
            eprintln!("error: no thresholds for {id}");
            rec.hard_errors += 1;
            continue;
        }
        let pairs: Vec<(String, f64)> = list.iter().map(|s| (s.review_id.clone(), s.raw)).collect();
        let (pos, neg) = split(&pairs);
        let orientation = ths[0].orientation;
        let mut r = evaluate_detector(id, orientation, &pos, &neg, &ths, run.cfg.bootstrap_resamples, run.cfg.seed)
            .with_context(|| format!("evaluating {id}"))?;
        r.test_fingerprint = Some(test.fingerprint());
        reports.push(r);
    }
    let ensembles: Vec<&VotingEnsemble> = thresholds.ensembles.iter().collect();
    if let Some(first) = ensembles.first() {
        let members: Vec<String> = first.anchor_llms().map(str::to_string).collect();
        let mut by_review: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
        for llm in &members {
            for s in scores.get(&anchor_detector_id(llm)).map(Vec::as_slice).unwrap_or_default() {
                by_review.entry(s.review_id.clone()).or_default().insert(llm.clone(), s.raw);
            }
        }
        let mut pairs = Vec::new();
        for (id, m) in &by_review {
            if m.len() == members.len() {
                pairs.push((id.clone(), first.combined_score(m)?));
            }
        }
        let (pos, neg) = split(&pairs);
        let ths = ensemble_thresholds(&ensembles);
        let mut r = evaluate_detector(&first.detector_id(), Orientation::HigherIsAi, &pos, &neg, &ths, run.cfg.bootstrap_resamples, run.cfg.seed)?;
        r.test_fingerprint = Some(test.fingerprint());
        reports.push(r);
    }
    let dir = run.out("evaluation");
    std::fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &EvaluationArtifact { provenance: run.provenance(Some(&test)), reports: reports.clone() })?;
    write_table_csv(File::create(dir.join("table.csv"))?, &reports)?;
    write_roc_csv(File::create(dir.join("roc.csv"))?, &reports)?;
    write_text(&dir.join("roc.svg"), &roc_svg("ROC on test reviews", &reports))?;
    print_table(&reports);
    rec.counts.insert("detectors".into(), reports.len());
    rec.outputs = ["report.json", "table.csv", "roc.csv", "roc.svg"].iter().map(|f| format!("evaluation/{f}")).collect();
    Ok(rec)
}

fn print_table(reports: &[EvaluationReport]) {
    println!("{:<32} {:>8} {:>16} {:>16} {:>7}", "detector", "target", "FPR (sd)", "TPR (sd)", "AUC");
    for r in reports {
        for row in &r.rows {
            println!(
                "{:<32} {:>8} {:>7.4} ({:.4}) {:>7.4} ({:.4}) {:>7.4}",
                r.detector_id, row.target_fpr, row.actual_fpr, row.fpr_sd, row.actual_tpr, row.tpr_sd, r.auc
            );
        }
    }
}

fn print_batch(report: &BatchReport) {
    println!(
        "jobs: {} total, {} skipped, {} done, {} failed, {} pending",
        report.total, report.skipped, report.done, report.failed, report.pending
    );
    for (reason, n) in &report.failed_by_reason {
        println!("  failed ({reason}): {n}");
    }
}

fn batch_record(command: &str, report: &BatchReport) -> CommandRecord {
    let mut counts = BTreeMap::from([
        ("total".to_string(), report.total),
        ("done".to_string(), report.done),
        ("skipped".to_string(), report.skipped),
        ("pending".to_string(), report.pending),
    ]);
    for (reason, n) in &report.failed_by_reason {
        counts.insert(format!("failed_{reason}"), *n);
    }
    CommandRecord { command: command.into(), soft_errors: report.failed, counts, ..CommandRecord::default() }
}

pub struct GenerateArgs {
    pub subset: Subset,
    pub archetypes: bool,
    pub max_dispatch: Option<usize>,
    pub retry_failed: bool,
}

pub fn generate(run: &Run, args: &GenerateArgs) -> Result<CommandRecord> {
    let gcfg = run.cfg.generation.clone().context("missing [generation] section")?;
    let prov = run.build_providers()?;
    let mut assets = AssetRegistry::bundled();
    if let Some(dir) = &gcfg.asset_dir {
        assets.load_dir(dir)?;
    }
    let dataset_llm = gcfg.dataset_llm.clone().unwrap_or_else(|| sanitize(&gcfg.llm).replace(['-', '.', '_'], ""));
    let g = Generator::new(&dataset_llm, prov.chat(&gcfg.llm)?, &assets, &run.schemas).with_max_attempts(gcfg.max_attempts);
    let corpus = run.load_corpus(Some(args.subset))?;
    let mut jobs = Vec::new();
    let mut hard = 0;
    let mut papers: BTreeMap<&str, Option<String>> = BTreeMap::new();
    let mut replicate: BTreeMap<&str, usize> = BTreeMap::new();
    let mut archetyped = BTreeSet::new();
    for h in corpus.humans() {
        let text = papers.entry(&h.paper_id).or_insert_with(|| match run.paper_text(&h.paper_id) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: {e:#}");
                hard += 1;
                None
            }
        });
        let Some(text) = text.clone() else { continue };
        if args.archetypes {
            if archetyped.insert(h.paper_id.as_str()) {
                for a in Archetype::ALL {
                    jobs.push(GenerationJob::archetype(&dataset_llm, &h.paper_id, &h.conference, h.year, h.subset, a, text.clone()));
                }
            }
        } else if let Some(decision) = &h.recommendation {
            let n = replicate.entry(&h.paper_id).or_default();
            jobs.push(GenerationJob::review(&dataset_llm, &h.paper_id, &h.conference, h.year, h.subset, decision, text, *n));
            *n += 1;
        }
    }
    if let Some(limit) = gcfg.limit {
        jobs.truncate(limit);
    }
    let dir = run.out(if args.archetypes { "generate-archetypes" } else { "generate" });
    let opts = BatchOptions {
        workers: gcfg.workers,
        retry_failed: args.retry_failed,
        max_dispatch: args.max_dispatch,
        ..BatchOptions::new(dir.join("ledger.jsonl"))
    };
    let report = run_batch(&jobs, |j| g.execute(j), &opts)?;
    print_batch(&report);
    let records = Ledger::load(&opts.ledger)?.records();
    let data_dir = dir.join("dataset");
    let written = write_dataset(&data_dir, &records, &run.schemas)?;
    println!("{} generated reviews written under {}", records.len(), data_dir.display());
    let mut rec = batch_record(if args.archetypes { "generate-archetypes" } else { "generate" }, &report);
    rec.hard_errors = hard;
    rec.corpus_fingerprint = Some(corpus.fingerprint());
    rec.provider_calls = prov.provider_calls();
    rec.outputs = std::iter::once(rel(run, &opts.ledger)).chain(written.iter().map(|p| rel(run, p))).collect();
    Ok(rec)
}

pub fn edit(run: &Run, subset: Subset, limit: Option<usize>, max_dispatch: Option<usize>) -> Result<CommandRecord> {
    let gcfg = run.cfg.generation.clone().context("missing [generation] section")?;
    let prov = run.build_providers()?;
    let assets = AssetRegistry::bundled();
    let g = Generator::new(&gcfg.llm, prov.chat(&gcfg.llm)?, &assets, &run.schemas);
    let corpus = run.load_corpus(Some(subset))?;
    let mut originals = BTreeMap::new();
    let mut jobs = Vec::new();
    let mut hard = 0;
    for h in corpus.humans().take(limit.unwrap_or(usize::MAX)) {
        match canonical_text(h) {
            Ok(text) => {
                jobs.extend(GenerationJob::edits(&sanitize(&gcfg.llm), &h.review_id, &text));
                originals.insert(h.review_id.clone(), text);
            }
            Err(e) => {
                eprintln!("error: {e}");
                hard += 1;
            }
        }
    }
    let dir = run.out("edit");
    let opts = BatchOptions { workers: gcfg.workers, max_dispatch, ..BatchOptions::new(dir.join("ledger.jsonl")) };
    let report = run_batch(&jobs, |j| g.execute(j), &opts)?;
    print_batch(&report);
    let mut grouped: BTreeMap<String, Vec<(EditLevel, String)>> = BTreeMap::new();
    for (review_id, level, text) in Ledger::load(&opts.ledger)?.edits() {
        grouped.entry(review_id).or_default().push((level, text));
    }
    let reviews: Vec<EditedReview> = grouped
        .into_iter()
        .filter(|(id, v)| v.len() == EditLevel::ALL.len() && originals.contains_key(id))
        .map(|(id, v)| EditedReview::new(&id, &originals[&id], v))
        .collect();
    let variants = reviews.iter().map(|r| r.variants.len()).sum::<usize>();
    let set = EditLevelSet::new(reviews)?;
    let path = dir.join("edits.json");
    write_json(&path, &set)?;
    println!("{} reviews with {variants} edited variants -> {}", set.len(), path.display());
    let mut rec = batch_record("edit", &report);
    rec.hard_errors = hard;
    rec.corpus_fingerprint = Some(corpus.fingerprint());
    rec.provider_calls = prov.provider_calls();
    rec.counts.insert("variants".into(), variants);
    rec.outputs = vec![rel(run, &opts.ledger), rel(run, &path)];
    Ok(rec)
}

#[derive(Serialize)]
struct ValidationArtifact {
    provenance: Provenance,
    n_records: usize,
    n_invalid: usize,
    invalid: Vec<revdetect::corpus::ValidationReport>,
}

pub fn validate(run: &Run) -> Result<CommandRecord> {
    let corpus = run.load_corpus(None)?;
    let mut invalid = Vec::new();
    for r in &corpus.records {
        let schema = run.schemas.require(&r.conference, r.year)?;
        let report = validate_record(r, schema);
        if !report.is_valid() {
            invalid.push(report);
        }
    }
    println!("{} records, {} invalid", corpus.len(), invalid.len());
    for r in invalid.iter().take(20) {
        println!("  {}: missing {:?}, extra {:?}, out of range {}, not numeric {:?}", r.review_id, r.missing, r.extra, r.out_of_range.len(), r.not_numeric);
    }
    let path = run.out("validation.json");
    let n_invalid = invalid.len();
    write_json(&path, &ValidationArtifact { provenance: run.provenance(Some(&corpus)), n_records: corpus.len(), n_invalid, invalid })?;
    Ok(CommandRecord {
        command: "validate".into(),
        corpus_fingerprint: Some(corpus.fingerprint()),
        hard_errors: n_invalid,
        outputs: vec![rel(run, &path)],
        counts: BTreeMap::from([("records".to_string(), corpus.len())]),
        ..CommandRecord::default()
    })
}

#[derive(Serialize)]
struct EditAnalysis {
    detector_id: String,
    target_fpr: f64,
    flag_rates: FlagRates,
    ndcg: f64,
    ndcg_with_originals: f64,
}

#[derive(Serialize)]
struct ReportArtifact {
    provenance: Provenance,
    score_differences: Vec<ScoreDifferenceSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    edit_analysis: Vec<EditAnalysis>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    edit_similarity: BTreeMap<EditLevel, f64>,
}

pub const SCORE_CATEGORIES: [&str; 5] = ["rating", "confidence", "soundness", "presentation", "contribution"];

pub fn report(run: &Run) -> Result<CommandRecord> {
    let test = run.load_corpus(Some(Subset::Test))?;
    let pairs = pair_reviews(&test).pairs;
    let dir = run.out("report");
    std::fs::create_dir_all(&dir)?;
    let mut rec = CommandRecord { command: "report".into(), corpus_fingerprint: Some(test.fingerprint()), ..Default::default() };
    let mut summaries = Vec::new();
    for cat in SCORE_CATEGORIES {
        let s = score_difference_summary(&pairs, cat)?;
        if s.n_pairs == 0 {
            continue;
        }
        let p = s.wilcoxon.as_ref().map_or("n/a".to_string(), |w| format!("{:.3e}", w.p_value));
        let mean = s.mean_diff.map_or("n/a".to_string(), |m| format!("{m:+.3}"));
        println!("{cat}: {} pairs, mean AI - human {mean}, Wilcoxon p = {p}", s.n_pairs);
        write_text(&dir.join(format!("hist_{cat}.svg")), &histogram_svg(&s))?;
        rec.outputs.push(format!("report/hist_{cat}.svg"));
        summaries.push(s);
    }
    write_histogram_csv(File::create(dir.join("histograms.csv"))?, &summaries)?;
    rec.outputs.push("report/histograms.csv".into());

    let mut edit_analysis = Vec::new();
    let mut edit_similarity = BTreeMap::new();
    let edits_path = run.out("edit/edits.json");
    if edits_path.is_file() {
        let mut set: EditLevelSet = serde_json::from_slice(&std::fs::read(&edits_path)?)?;
        let thresholds = load_thresholds(run)?;
        let prov = run.build_providers()?;
        let sel = selection(run)?;
        let paper_of: BTreeMap<&str, &str> = test.records.iter().map(|r| (r.review_id.as_str(), r.paper_id.as_str())).collect();
        // Score originals and variants through the same path as test reviews.
        let mut items = Vec::new();
        for r in set.reviews() {
            let paper_id = paper_of.get(r.review_id.as_str()).copied().unwrap_or_default().to_string();
            items.push(Item { review_id: format!("{}#original", r.review_id), paper_id: paper_id.clone(), text: r.original.clone() });
            for (l, v) in &r.variants {
                items.push(Item { review_id: format!("{}#{l}", r.review_id), paper_id: paper_id.clone(), text: v.text.clone() });
            }
        }
        let scored = score_items(run, &prov, &sel, &items)?;
        rec.hard_errors += scored.hard;
        for (id, list) in &scored.by_detector {
            let by_item: BTreeMap<&str, f64> = list.iter().map(|s| (s.review_id.as_str(), s.raw)).collect();
            let mut scored_set = set.clone();
            let ok = scored_set.score_with(|text: &str| {
                items.iter().find(|i| i.text == text).and_then(|i| by_item.get(i.review_id.as_str()).copied()).ok_or(())
            });
            if ok.is_err() {
                eprintln!("error: {id}: not every edited review could be scored");
                rec.hard_errors += 1;
                continue;
            }
            let orientation = list.first().map_or(Orientation::HigherIsAi, |s| s.orientation);
            for &t in &run.cfg.targets {
                let Some(th) = thresholds.find(id, t) else { continue };
                let flag_rates = flag_rate_by_level(&scored_set, th, true)?;
                let rates: Vec<String> = flag_rates.by_level.iter().map(|(l, r)| format!("{l} {r:.3}")).collect();
                println!("{id} @ {t}: flagged {}", rates.join(", "));
                edit_analysis.push(EditAnalysis {
                    detector_id: id.clone(),
                    target_fpr: t,
                    flag_rates,
                    ndcg: edit_ranking_ndcg(&scored_set, orientation, false)?,
                    ndcg_with_originals: edit_ranking_ndcg(&scored_set, orientation, true)?,
                });
            }
        }
        if let Ok(embedder) = prov.embedder() {
            edit_similarity = edit_similarity_check(&mut set, embedder)?;
            for (l, s) in &edit_similarity {
                println!("mean similarity to original, {l}: {s:.4}");
            }
        }
        rec.provider_calls = prov.provider_calls();
    }
    let path = dir.join("report.json");
    write_json(&path, &ReportArtifact { provenance: run.provenance(Some(&test)), score_differences: summaries, edit_analysis, edit_similarity })?;
    rec.outputs.push(rel(run, &path));
    Ok(rec)
}

pub fn detectors() {
    println!("{:<16} {:<14} {:<12} description", "id", "orientation", "requires");
    println!("{:<16} {:<14} {:<12} cosine similarity to the paper's anchor review, one per anchor LLM", "anchor/<llm>", "higher_is_ai", "embedder");
    for s in revdetect::metrics::registry() {
        let req = serde_json::to_value(s.requires).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        println!("{:<16} {:<14} {:<12} {}", s.detector_id, s.orientation.to_string(), req, s.description);
    }
}

pub fn check_subset(s: &str) -> Result<Subset> {
    s.parse::<Subset>().map_err(anyhow::Error::msg)
}

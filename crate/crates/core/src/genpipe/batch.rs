//! Resumable batch execution over an append-only JSON-lines ledger.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::GenError;
use crate::corpus::{CorpusError, ReviewRecord, Subset};
use crate::prompts::{Archetype, EditLevel};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobSpec {
    Review { paper_id: String, conference: String, year: u16, subset: Subset, decision: String },
    Archetype { paper_id: String, conference: String, year: u16, subset: Subset, archetype: Archetype },
    Edit { review_id: String, level: EditLevel },
}

/// One unit of generation work. `input` is the paper text for reviews and
/// the human review text for edits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub job_id: String,
    pub spec: JobSpec,
    pub input: String,
}

impl GenerationJob {
    pub fn review(
        llm: &str,
        paper_id: &str,
        conference: &str,
        year: u16,
        subset: Subset,
        decision: &str,
        paper_text: impl Into<String>,
        replicate: usize,
    ) -> Self {
        Self {
            job_id: format!("{llm}-{conference}{year}-{paper_id}-{replicate}"),
            spec: JobSpec::Review {
                paper_id: paper_id.into(),
                conference: conference.into(),
                year,
                subset,
                decision: decision.into(),
            },
            input: paper_text.into(),
        }
    }

    pub fn archetype(
        llm: &str,
        paper_id: &str,
        conference: &str,
        year: u16,
        subset: Subset,
        archetype: Archetype,
        paper_text: impl Into<String>,
    ) -> Self {
        Self {
            job_id: format!("{llm}-{conference}{year}-{paper_id}-{archetype}"),
            spec: JobSpec::Archetype {
                paper_id: paper_id.into(),
                conference: conference.into(),
                year,
                subset,
                archetype,
            },
            input: paper_text.into(),
        }
    }

    pub fn edit(llm: &str, review_id: &str, level: EditLevel, review_text: impl Into<String>) -> Self {
        Self {
            job_id: format!("{llm}-edit-{review_id}-{level}"),
            spec: JobSpec::Edit { review_id: review_id.into(), level },
            input: review_text.into(),
        }
    }

    /// Expands one human review into its four edit jobs.
    pub fn edits(llm: &str, review_id: &str, review_text: &str) -> Vec<Self> {
        EditLevel::ALL.iter().map(|&l| Self::edit(llm, review_id, l, review_text)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JobOutput {
    Review(ReviewRecord),
    Edit { review_id: String, level: EditLevel, text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub job_id: String,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<JobOutput>,
}

/// Latest ledger entry per job. Later lines supersede earlier ones; lines
/// that do not parse (a write cut short by a crash) are skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ledger {
    pub entries: BTreeMap<String, LedgerEntry>,
    pub attempts: BTreeMap<String, usize>,
}

impl Ledger {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let mut ledger = Ledger::default();
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ledger),
            Err(e) => return Err(CorpusError::Io { path: path.display().to_string(), source: e }),
        };
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| CorpusError::Io { path: path.display().to_string(), source: e })?;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LedgerEntry>(line) {
                Ok(entry) => {
                    *ledger.attempts.entry(entry.job_id.clone()).or_default() += 1;
                    ledger.entries.insert(entry.job_id.clone(), entry);
                }
                Err(e) => log::warn!("{}:{}: skipping unreadable ledger line: {e}", path.display(), i + 1),
            }
        }
        Ok(ledger)
    }

    pub fn status(&self, job_id: &str) -> JobStatus {
        self.entries.get(job_id).map_or(JobStatus::Pending, |e| e.status)
    }

    pub fn records(&self) -> Vec<ReviewRecord> {
        self.entries
            .values()
            .filter_map(|e| match &e.output {
                Some(JobOutput::Review(r)) if e.status == JobStatus::Done => Some(r.clone()),
                _ => None,
            })
            .collect()
    }

    /// Completed edits as (source review id, level, edited text).
    pub fn edits(&self) -> Vec<(String, EditLevel, String)> {
        self.entries
            .values()
            .filter_map(|e| match &e.output {
                Some(JobOutput::Edit { review_id, level, text }) if e.status == JobStatus::Done => {
                    Some((review_id.clone(), *level, text.clone()))
                }
                _ => None,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchOptions {
    pub ledger: PathBuf,
    pub workers: usize,
    /// Re-run jobs whose last outcome was a failure.
    pub retry_failed: bool,
    /// Stop after dispatching this many jobs, leaving the rest pending.
    pub max_dispatch: Option<usize>,
}

impl BatchOptions {
    pub fn new(ledger: impl Into<PathBuf>) -> Self {
        Self { ledger: ledger.into(), workers: 4, retry_failed: false, max_dispatch: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub total: usize,
    /// Done, or failed without `retry_failed`, before this run.
    pub skipped: usize,
    pub dispatched: usize,
    pub done: usize,
    pub failed: usize,
    pub pending: usize,
    pub failed_by_reason: BTreeMap<String, usize>,
}

/// Runs every job not already done according to the ledger, appending one
/// line per outcome. Rerunning with the same ledger resumes where it stopped.
pub fn run_batch<F>(jobs: &[GenerationJob], execute: F, opts: &BatchOptions) -> Result<BatchReport, CorpusError>
where
    F: Fn(&GenerationJob) -> Result<JobOutput, GenError> + Sync,
{
    let io_err = |e| CorpusError::Io { path: opts.ledger.display().to_string(), source: e };
    let ledger = Ledger::load(&opts.ledger)?;
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = jobs.iter().find(|j| !seen.insert(j.job_id.as_str())) {
        return Err(CorpusError::File {
            file: opts.ledger.display().to_string(),
            detail: format!("duplicate job id '{}'", dup.job_id),
        });
    }
    let todo: Vec<&GenerationJob> = jobs
        .iter()
        .filter(|j| match ledger.status(&j.job_id) {
            JobStatus::Done => false,
            JobStatus::Failed => opts.retry_failed,
            JobStatus::Pending => true,
        })
        .collect();
    let limit = opts.max_dispatch.map_or(todo.len(), |m| m.min(todo.len()));
    if let Some(parent) = opts.ledger.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(io_err)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(&opts.ledger).map_err(io_err)?;
    let existing = std::fs::read(&opts.ledger).map_err(io_err)?;
    if existing.last().is_some_and(|b| *b != b'\n') {
        file.write_all(b"\n").map_err(io_err)?;
    }
    let writer = Mutex::new((file, None::<std::io::Error>));
    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<Result<(), &'static str>>> = Mutex::new(Vec::new());

    std::thread::scope(|s| {
        for _ in 0..opts.workers.max(1).min(limit.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= limit {
                    break;
                }
                let job = todo[i];
                let result = execute(job);
                let entry = match &result {
                    Ok(out) => LedgerEntry {
                        job_id: job.job_id.clone(),
                        status: JobStatus::Done,
                        reason: None,
                        detail: None,
                        output: Some(out.clone()),
                    },
                    Err(e) => LedgerEntry {
                        job_id: job.job_id.clone(),
                        status: JobStatus::Failed,
                        reason: Some(e.reason().to_string()),
                        detail: Some(e.to_string()),
                        output: None,
                    },
                };
                let mut line = serde_json::to_string(&entry).expect("ledger entry serializes");
                line.push('\n');
                let mut w = writer.lock().expect("ledger lock");
                if w.1.is_none() {
                    if let Err(e) = w.0.write_all(line.as_bytes()).and_then(|_| w.0.flush()) {
                        w.1 = Some(e);
                    }
                }
                drop(w);
                outcomes.lock().expect("outcome lock").push(result.map(|_| ()).map_err(|e| e.reason()));
            });
        }
    });

    let (_, write_error) = writer.into_inner().expect("ledger lock");
    if let Some(e) = write_error {
        return Err(io_err(e));
    }
    let mut report = BatchReport {
        total: jobs.len(),
        skipped: jobs.len() - todo.len(),
        dispatched: limit,
        ..BatchReport::default()
    };
    for o in outcomes.into_inner().expect("outcome lock") {
        match o {
            Ok(()) => report.done += 1,
            Err(reason) => {
                report.failed += 1;
                *report.failed_by_reason.entry(reason.to_string()).or_default() += 1;
            }
        }
    }
    report.pending = todo.len() - limit;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::tests::VALID_ICLR2022;
    use super::super::{AssetRegistry, Generator};
    use super::*;
    use crate::corpus::SchemaRegistry;
    use crate::providers::mock::MockChat;
    use crate::providers::ProviderError;

    fn jobs(n: usize) -> Vec<GenerationJob> {
        (0..n)
            .map(|i| {
                GenerationJob::review(
                    "gpt4o",
                    &format!("p{i}"),
                    "ICLR",
                    2022,
                    Subset::Test,
                    "accept, good paper",
                    format!("paper {i}"),
                    0,
                )
            })
            .collect()
    }

    #[test]
    fn resume_skips_done_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let (a, s) = (AssetRegistry::bundled(), SchemaRegistry::bundled());
        let chat = MockChat::canned("m", VALID_ICLR2022);
        let g = Generator::new("gpt4o", &chat, &a, &s);
        let opts = BatchOptions::new(dir.path().join("ledger.jsonl"));
        let js = jobs(6);
        let r1 = run_batch(&js, |j| g.execute(j), &opts).unwrap();
        assert_eq!((r1.done, r1.failed, r1.pending), (6, 0, 0));
        let r2 = run_batch(&js, |j| g.execute(j), &opts).unwrap();
        assert_eq!((r2.skipped, r2.dispatched), (6, 0));
        assert_eq!(chat.calls(), 6);
        let recs = Ledger::load(&opts.ledger).unwrap().records();
        assert_eq!(recs.len(), 6);
        assert!(recs.iter().all(|r| r.review_id.starts_with("gpt4o-ICLR2022-p")));
    }

    #[test]
    fn interrupted_run_resumes_to_same_state() {
        let dir = tempfile::tempdir().unwrap();
        let (a, s) = (AssetRegistry::bundled(), SchemaRegistry::bundled());
        let chat = MockChat::canned("m", VALID_ICLR2022);
        let g = Generator::new("gpt4o", &chat, &a, &s);
        let js = jobs(10);
        let full = BatchOptions::new(dir.path().join("full.jsonl"));
        run_batch(&js, |j| g.execute(j), &full).unwrap();

        let part = BatchOptions { max_dispatch: Some(4), ..BatchOptions::new(dir.path().join("part.jsonl")) };
        let r = run_batch(&js, |j| g.execute(j), &part).unwrap();
        assert_eq!((r.done, r.pending), (4, 6));
        let r = run_batch(&js, |j| g.execute(j), &BatchOptions { max_dispatch: None, ..part.clone() }).unwrap();
        assert_eq!((r.skipped, r.done), (4, 6));
        assert_eq!(Ledger::load(&full.ledger).unwrap().entries, Ledger::load(&part.ledger).unwrap().entries);
    }

    #[test]
    fn failures_are_counted_by_reason_and_retryable() {
        let dir = tempfile::tempdir().unwrap();
        let opts = BatchOptions::new(dir.path().join("l.jsonl"));
        let js = jobs(3);
        let fail = |j: &GenerationJob| -> Result<JobOutput, GenError> {
            match j.job_id.as_str() {
                id if id.ends_with("p0-0") => Err(GenError::SafetyFiltered),
                id if id.ends_with("p1-0") => {
                    Err(ProviderError::ContextOverflow { estimated_tokens: 10, limit: 5 }.into())
                }
                _ => Ok(JobOutput::Edit { review_id: "x".into(), level: EditLevel::Minimum, text: "t".into() }),
            }
        };
        let r = run_batch(&js, fail, &opts).unwrap();
        assert_eq!(r.failed, 2);
        assert_eq!(r.failed_by_reason["safety_filtered"], 1);
        assert_eq!(r.failed_by_reason["context_overflow"], 1);
        // Failed jobs stay failed unless a retry is requested.
        let r = run_batch(&js, fail, &opts).unwrap();
        assert_eq!((r.dispatched, r.skipped), (0, 3));
        let ok = |_: &GenerationJob| -> Result<JobOutput, GenError> {
            Ok(JobOutput::Edit { review_id: "x".into(), level: EditLevel::Minimum, text: "t".into() })
        };
        let r = run_batch(&js, ok, &BatchOptions { retry_failed: true, ..opts.clone() }).unwrap();
        assert_eq!((r.dispatched, r.done), (2, 2));
        let l = Ledger::load(&opts.ledger).unwrap();
        assert!(l.entries.values().all(|e| e.status == JobStatus::Done));
        assert_eq!(l.attempts[&js[0].job_id], 2);
    }

    #[test]
    fn edit_batch_persists_four_variants() {
        let dir = tempfile::tempdir().unwrap();
        let (a, s) = (AssetRegistry::bundled(), SchemaRegistry::bundled());
        let chat = MockChat::echo("m");
        let g = Generator::new("gpt4o", &chat, &a, &s);
        let js = GenerationJob::edits("gpt4o", "h1", "The paper is fine.");
        let r = run_batch(&js, |j| g.execute(j), &BatchOptions::new(dir.path().join("e.jsonl"))).unwrap();
        assert_eq!(r.done, 4);
        let edits = Ledger::load(&dir.path().join("e.jsonl")).unwrap().edits();
        let levels: std::collections::BTreeSet<EditLevel> = edits.iter().map(|e| e.1).collect();
        assert_eq!(levels.len(), 4);
        assert!(edits.iter().all(|e| e.0 == "h1" && e.2 == "The paper is fine."));
    }

    #[test]
    fn truncated_tail_is_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        std::fs::write(&p, "{\"job_id\":\"a\",\"status\":\"failed\",\"reason\":\"x\"}\n{\"job_id\":\"b\",\"sta").unwrap();
        let l = Ledger::load(&p).unwrap();
        assert_eq!(l.status("a"), JobStatus::Failed);
        assert_eq!(l.status("b"), JobStatus::Pending);
        let js = [GenerationJob::edit("m", "b", EditLevel::Minimum, "t")];
        let js = vec![GenerationJob { job_id: "b".into(), ..js[0].clone() }];
        let ok = |_: &GenerationJob| -> Result<JobOutput, GenError> {
            Ok(JobOutput::Edit { review_id: "b".into(), level: EditLevel::Minimum, text: "t".into() })
        };
        run_batch(&js, ok, &BatchOptions::new(&p)).unwrap();
        let l = Ledger::load(&p).unwrap();
        assert_eq!((l.status("a"), l.status("b")), (JobStatus::Failed, JobStatus::Done));
    }
}

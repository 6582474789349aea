//! Reading and writing the on-disk dataset layout:
//!
//! ```text
//! <root>/<subset>/<llm dir>/<Conference><Year>.<subset>.<LLM>.csv
//! ```
//!
//! Each CSV row is one review. The columns `review_id`, `paper_id` and
//! `source` (`human` or the generating LLM's name) are required,
//! `archetype` and `prompt_hash` are optional, and every other column is a
//! template field of the file's conference-year.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use indexmap::IndexMap;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::schema::{normalize_field_name, parse_leading_number};
use super::{CorpusError, Corpus, FieldValue, ReviewRecord, SchemaRegistry, Source, Subset};

const META_COLUMNS: [&str; 5] = ["review_id", "paper_id", "source", "archetype", "prompt_hash"];

/// Components of a `<conference><year>.<subset>.<LLM>.csv` file name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFileName {
    pub conference: String,
    pub year: u16,
    pub subset: Subset,
    pub llm: String,
}

impl DatasetFileName {
    pub fn file_name(&self) -> String {
        format!("{}{}.{}.{}.csv", self.conference, self.year, self.subset, self.llm)
    }

    /// Directory name used for the LLM when writing (`gpt-4o` → `gpt4o`).
    pub fn llm_dir(&self) -> String {
        self.llm.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase()
    }
}

pub fn parse_file_name(name: &str) -> Option<DatasetFileName> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"^([A-Za-z]+)(\d{4})\.(calibration|test|extended)\.(.+)\.csv$").expect("static regex")
    });
    let caps = re.captures(name)?;
    Some(DatasetFileName {
        conference: caps[1].to_string(),
        year: caps[2].parse().ok()?,
        subset: caps[3].parse().ok()?,
        llm: caps[4].to_string(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadFilter {
    pub conference: Option<String>,
    pub year: Option<u16>,
    pub subset: Option<Subset>,
    pub llm: Option<String>,
}

impl LoadFilter {
    fn accepts(&self, f: &DatasetFileName) -> bool {
        self.conference.as_ref().is_none_or(|c| c == &f.conference)
            && self.year.is_none_or(|y| y == f.year)
            && self.subset.is_none_or(|s| s == f.subset)
            && self.llm.as_ref().is_none_or(|l| l == &f.llm)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Fail on files that do not follow the naming convention instead of
    /// skipping them with a warning.
    pub strict_file_names: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileCount {
    pub path: String,
    pub file: DatasetFileName,
    pub human: usize,
    pub ai: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub files: Vec<FileCount>,
    pub warnings: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    Ok(out)
}

/// Loads every CSV under `root` that matches `filter`. Files are parsed in
/// parallel; record order follows the sorted directory walk.
pub fn load_dataset(
    root: &Path,
    filter: &LoadFilter,
    options: &LoadOptions,
    registry: &SchemaRegistry,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let mut report = LoadReport::default();
    let mut files = Vec::new();
    for subset in Subset::ALL {
        if filter.subset.is_some_and(|s| s != subset) {
            continue;
        }
        let subset_dir = root.join(subset.as_str());
        if !subset_dir.is_dir() {
            continue;
        }
        for llm_dir in sorted_entries(&subset_dir)? {
            if !llm_dir.is_dir() {
                continue;
            }
            for path in sorted_entries(&llm_dir)? {
                if !path.is_file() {
                    continue;
                }
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
                match parse_file_name(&name).filter(|f| f.subset == subset) {
                    Some(parsed) => {
                        if filter.accepts(&parsed) {
                            files.push((path, parsed));
                        }
                    }
                    None if options.strict_file_names => {
                        return Err(CorpusError::UnknownFileName(path.display().to_string()))
                    }
                    None => {
                        log::warn!("skipping {}: not a dataset file name", path.display());
                        report.warnings.push(format!("skipped unrecognized file {}", path.display()));
                    }
                }
            }
        }
    }

    let parsed: Vec<Result<(Vec<ReviewRecord>, FileCount), CorpusError>> = files
        .par_iter()
        .map(|(path, name)| {
            let records = read_dataset_file(path, name, registry)?;
            let human = records.iter().filter(|r| r.source.is_human()).count();
            let count = FileCount {
                path: path.display().to_string(),
                file: name.clone(),
                human,
                ai: records.len() - human,
            };
            Ok((records, count))
        })
        .collect();

    let mut records = Vec::new();
    for item in parsed {
        let (mut recs, count) = item?;
        records.append(&mut recs);
        report.files.push(count);
    }
    Ok((Corpus::new(records), report))
}

fn read_dataset_file(
    path: &Path,
    name: &DatasetFileName,
    registry: &SchemaRegistry,
) -> Result<Vec<ReviewRecord>, CorpusError> {
    let schema = registry.require(&name.conference, name.year)?;
    let file = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CorpusError::File { file: file.clone(), detail: e.to_string() })?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CorpusError::File { file: file.clone(), detail: e.to_string() })?
        .iter()
        .map(normalize_field_name)
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == &normalize_field_name(name));
    let (Some(id_col), Some(paper_col), Some(source_col)) =
        (col("review_id"), col("paper_id"), col("source"))
    else {
        return Err(CorpusError::File {
            file,
            detail: "header must contain review_id, paper_id and source columns".into(),
        });
    };
    let archetype_col = col("archetype");
    let hash_col = col("prompt_hash");
    let meta: Vec<String> = META_COLUMNS.iter().map(|m| normalize_field_name(m)).collect();

    // Template fields in schema order, then unexpected columns in header order.
    let mut field_cols: Vec<(String, usize)> = schema
        .field_names
        .iter()
        .filter_map(|f| headers.iter().position(|h| h == f).map(|i| (f.clone(), i)))
        .collect();
    for (i, h) in headers.iter().enumerate() {
        if !meta.contains(h) && !schema.field_names.contains(h) {
            field_cols.push((h.clone(), i));
        }
    }

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CorpusError::Row { file: file.clone(), line, detail: e.to_string() }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let row_err = |detail: String| CorpusError::Row { file: file.clone(), line, detail };
        let review_id = row[id_col].trim().to_string();
        let paper_id = row[paper_col].trim().to_string();
        if review_id.is_empty() || paper_id.is_empty() {
            return Err(row_err("empty review_id or paper_id".into()));
        }
        let source: Source = row[source_col].parse().map_err(row_err)?;
        let optional = |c: Option<usize>| {
            c.map(|c| row[c].trim().to_string()).filter(|v| !v.is_empty())
        };

        let mut fields = IndexMap::new();
        for (field, i) in &field_cols {
            let cell = &row[*i];
            let value = if schema.is_numeric(field) {
                parse_leading_number(cell)
                    .map(FieldValue::Number)
                    .unwrap_or_else(|| FieldValue::Text(cell.to_string()))
            } else {
                FieldValue::Text(cell.to_string())
            };
            fields.insert(field.clone(), value);
        }
        let recommendation = schema
            .recommendation_field
            .as_ref()
            .and_then(|f| fields.get(f))
            .map(|v| v.render().trim().to_string())
            .filter(|s| !s.is_empty());
        out.push(ReviewRecord {
            review_id,
            paper_id,
            conference: name.conference.clone(),
            year: name.year,
            subset: name.subset,
            source,
            dataset_llm: name.llm.clone(),
            fields,
            recommendation,
            archetype: optional(archetype_col),
            prompt_hash: optional(hash_col),
        });
    }
    Ok(out)
}

/// Writes records into the dataset layout under `root`, one file per
/// (subset, dataset LLM, conference, year). Existing files are replaced.
/// Returns the written paths in sorted order.
pub fn write_dataset(
    root: &Path,
    records: &[ReviewRecord],
    registry: &SchemaRegistry,
) -> Result<Vec<PathBuf>, CorpusError> {
    let mut groups: BTreeMap<(Subset, String, String, u16), Vec<&ReviewRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.subset, r.dataset_llm.clone(), r.conference.clone(), r.year))
            .or_default()
            .push(r);
    }
    let mut written = Vec::new();
    for ((subset, llm, conference, year), recs) in groups {
        let schema = registry.require(&conference, year)?;
        let name = DatasetFileName { conference, year, subset, llm };
        let dir = root.join(subset.as_str()).join(name.llm_dir());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(name.file_name());
        let mut w = csv::Writer::from_path(&path)?;
        let mut header: Vec<&str> = META_COLUMNS.to_vec();
        header.extend(schema.field_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for r in recs {
            if let Some(extra) = r.fields.keys().find(|k| !schema.field_names.contains(k)) {
                return Err(CorpusError::File {
                    file: path.display().to_string(),
                    detail: format!("review {} has field '{extra}' outside the {} template", r.review_id, schema.key()),
                });
            }
            let mut row = vec![
                r.review_id.clone(),
                r.paper_id.clone(),
                r.source.to_string(),
                r.archetype.clone().unwrap_or_default(),
                r.prompt_hash.clone().unwrap_or_default(),
            ];
            row.extend(
                schema
                    .field_names
                    .iter()
                    .map(|f| r.fields.get(f).map(FieldValue::render).unwrap_or_default()),
            );
            w.write_record(&row)?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    written.sort();
    Ok(written)
}

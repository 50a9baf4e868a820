//! Append-only NDJSON persistence.
//!
//! `articles.ndjson` holds one [`ArticleRecord`] per line. A record is first
//! written when it is fetched; later stages append a full new version and
//! readers keep the last line per id. `labels.ndjson` works the same way for
//! human relevance labels.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{is_country_code, TimeWindow};
use crate::relevance::Class;

pub const ARTICLES_FILE: &str = "articles.ndjson";
pub const LABELS_FILE: &str = "labels.ndjson";
pub const COUNTRIES_FILE: &str = "countries.tsv";

/// Share of corrupt lines above which a read fails instead of skipping them.
pub const MAX_CORRUPT_FRACTION: f64 = 0.01;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{corrupt} of {total} lines in {} are corrupt (first at line {first_line})", path.display())]
    CorruptLine {
        path: PathBuf,
        corrupt: usize,
        total: usize,
        first_line: usize,
    },
    #[error("malformed record id `{0}`")]
    InvalidId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("countries.tsv line {line}: {reason}")]
    CountryMap { line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_owned(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub taxon: String,
    pub url: String,
    pub fetched_url: String,
    pub seen_date: DateTime<Utc>,
    pub source_country_raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_country_iso: Option<String>,
    pub language: String,
    pub title: String,
    pub text: String,
    pub fetched_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance_posterior: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<f64>,
}

impl ArticleRecord {
    pub fn validate(&self) -> Result<(), StoreError> {
        if !is_record_id(&self.id) {
            return Err(StoreError::InvalidId(self.id.clone()));
        }
        if self.text.is_empty() {
            return Err(StoreError::InvalidRecord(format!(
                "{}: empty text",
                self.id
            )));
        }
        if let Some(p) = self.relevance_posterior {
            if !(0.0..=1.0).contains(&p) {
                return Err(StoreError::InvalidRecord(format!(
                    "{}: posterior {p} outside [0, 1]",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Hostname of the article URL, used for per-outlet grouping.
    pub fn domain(&self) -> String {
        url::Url::parse(&self.url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_ascii_lowercase))
            .unwrap_or_default()
    }
}

/// 64 lowercase hex characters.
pub fn is_record_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Bundled `countries.tsv` contents.
pub const BUNDLED_COUNTRIES: &str = include_str!("../data/countries.tsv");

/// Maps the index's verbatim country names to alpha-2 codes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountryMap {
    by_name: HashMap<String, String>,
}

impl CountryMap {
    /// `raw<TAB>alpha2` lines. Lookup is case-insensitive on the raw name.
    pub fn parse(text: &str) -> Result<Self, StoreError> {
        let mut by_name = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| StoreError::CountryMap {
                line: i + 1,
                reason: reason.to_owned(),
            };
            let (raw, code) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected raw<TAB>alpha2"))?;
            let code = code.trim().to_ascii_uppercase();
            if !is_country_code(&code) {
                return Err(bad("not an alpha-2 code"));
            }
            by_name.insert(raw.trim().to_lowercase(), code);
        }
        Ok(CountryMap { by_name })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_COUNTRIES).expect("bundled countries.tsv parses")
    }

    pub fn resolve(&self, raw: &str) -> Option<String> {
        self.by_name.get(&raw.trim().to_lowercase()).cloned()
    }
}

/// Filter for [`Store::query_records`].
#[derive(Debug, Clone, Default)]
pub struct RecordFilter {
    pub taxa: Option<Vec<String>>,
    pub window: Option<TimeWindow>,
    pub relevant_only: bool,
}

impl RecordFilter {
    fn matches(&self, r: &ArticleRecord) -> bool {
        self.taxa.as_ref().is_none_or(|t| t.contains(&r.taxon))
            && self.window.is_none_or(|w| w.contains(r.seen_date))
            && (!self.relevant_only || r.relevant == Some(true))
    }
}

/// Latest version of every record in a log.
#[derive(Debug, Clone, Default)]
pub struct LogSnapshot {
    pub records: BTreeMap<String, ArticleRecord>,
    pub total_lines: usize,
    pub corrupt_lines: usize,
}

/// Reads an NDJSON file line by line, keeping the last parse per key.
/// Corrupt lines are skipped and counted; more than 1% corrupt is an error.
fn read_ndjson<T, K>(path: &Path, key: K) -> Result<(BTreeMap<String, T>, usize, usize), StoreError>
where
    T: serde::de::DeserializeOwned,
    K: Fn(&T) -> Option<String>,
{
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((BTreeMap::new(), 0, 0)),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut latest = BTreeMap::new();
    let (mut total, mut corrupt, mut first_bad) = (0, 0, 0);
    for (i, line) in BufReader::new(file).split(b'\n').enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        total += 1;
        match serde_json::from_slice::<T>(&line)
            .ok()
            .and_then(|v| key(&v).map(|k| (k, v)))
        {
            Some((k, v)) => {
                latest.insert(k, v);
            }
            None => {
                corrupt += 1;
                if first_bad == 0 {
                    first_bad = i + 1;
                }
            }
        }
    }
    if corrupt > 0 {
        if corrupt as f64 > MAX_CORRUPT_FRACTION * total as f64 {
            return Err(StoreError::CorruptLine {
                path: path.to_owned(),
                corrupt,
                total,
                first_line: first_bad,
            });
        }
        warn!(
            "{}: skipped {corrupt} corrupt line(s) of {total}, first at line {first_bad}",
            path.display()
        );
    }
    Ok((latest, total, corrupt))
}

/// Opens `path` for appending, first terminating a torn final line so the
/// next write starts on a fresh line.
fn open_append(path: &Path) -> Result<File, StoreError> {
    let mut file = OpenOptions::new()
        .create(true)
        .read(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let len = file.metadata().map_err(io_err(path))?.len();
    if len > 0 {
        let mut last = [0u8; 1];
        file.seek(SeekFrom::Start(len - 1)).map_err(io_err(path))?;
        file.read_exact(&mut last).map_err(io_err(path))?;
        if last[0] != b'\n' {
            file.write_all(b"\n").map_err(io_err(path))?;
        }
    }
    Ok(file)
}

fn write_line<T: Serialize>(file: &mut File, path: &Path, value: &T) -> Result<(), StoreError> {
    let mut line = serde_json::to_vec(value).expect("record serializes");
    line.push(b'\n');
    file.write_all(&line).map_err(io_err(path))?;
    file.flush().map_err(io_err(path))
}

/// Single-writer handle on a store directory.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    articles: File,
    ids: HashSet<String>,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(ARTICLES_FILE);
        let snapshot = Self::snapshot_at(&path)?;
        let articles = open_append(&path)?;
        Ok(Store {
            ids: snapshot.records.into_keys().collect(),
            dir,
            articles,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn articles_path(&self) -> PathBuf {
        self.dir.join(ARTICLES_FILE)
    }

    pub fn labels_path(&self) -> PathBuf {
        self.dir.join(LABELS_FILE)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.ids.contains(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends a new record. Returns `false` without writing when the id is
    /// already stored.
    pub fn append_record(&mut self, record: &ArticleRecord) -> Result<bool, StoreError> {
        record.validate()?;
        if self.ids.contains(&record.id) {
            return Ok(false);
        }
        let path = self.articles_path();
        write_line(&mut self.articles, &path, record)?;
        self.ids.insert(record.id.clone());
        Ok(true)
    }

    /// Appends a new version of an existing record; it supersedes earlier
    /// lines with the same id on read.
    pub fn append_version(&mut self, record: &ArticleRecord) -> Result<(), StoreError> {
        record.validate()?;
        if !self.ids.contains(&record.id) {
            return Err(StoreError::InvalidRecord(format!(
                "{} is not in the store",
                record.id
            )));
        }
        let path = self.articles_path();
        write_line(&mut self.articles, &path, record)
    }

    pub fn snapshot(&self) -> Result<LogSnapshot, StoreError> {
        Self::snapshot_at(&self.articles_path())
    }

    fn snapshot_at(path: &Path) -> Result<LogSnapshot, StoreError> {
        let (records, total_lines, corrupt_lines) =
            read_ndjson::<ArticleRecord, _>(path, |r| Some(r.id.clone()))?;
        Ok(LogSnapshot {
            records,
            total_lines,
            corrupt_lines,
        })
    }

    /// Latest version of each matching record, ordered by (seen_date, id).
    pub fn query_records(&self, filter: &RecordFilter) -> Result<Vec<ArticleRecord>, StoreError> {
        query_dir(&self.dir, filter)
    }
}

/// Latest version of every record in a store directory, keyed by id.
pub fn snapshot_dir(dir: &Path) -> Result<LogSnapshot, StoreError> {
    Store::snapshot_at(&dir.join(ARTICLES_FILE))
}

/// Reads a store directory without taking the writer role.
pub fn query_dir(dir: &Path, filter: &RecordFilter) -> Result<Vec<ArticleRecord>, StoreError> {
    let snapshot = Store::snapshot_at(&dir.join(ARTICLES_FILE))?;
    let mut out: Vec<ArticleRecord> = snapshot
        .records
        .into_values()
        .filter(|r| filter.matches(r))
        .collect();
    out.sort_by(|a, b| a.seen_date.cmp(&b.seen_date).then_with(|| a.id.cmp(&b.id)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelLine {
    pub id: String,
    pub class: Class,
    pub labeled_at: DateTime<Utc>,
}

/// Appends one label line to `path`.
pub fn append_label(
    path: &Path,
    id: &str,
    class: Class,
    labeled_at: DateTime<Utc>,
) -> Result<(), StoreError> {
    if !is_record_id(id) {
        return Err(StoreError::InvalidId(id.to_owned()));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut file = open_append(path)?;
    write_line(
        &mut file,
        path,
        &LabelLine {
            id: id.to_owned(),
            class,
            labeled_at,
        },
    )
}

/// Latest label per id.
pub fn read_labels(path: &Path) -> Result<BTreeMap<String, LabelLine>, StoreError> {
    read_ndjson::<LabelLine, _>(path, |l| is_record_id(&l.id).then(|| l.id.clone()))
        .map(|(m, _, _)| m)
}

//! Stage wiring shared by the command-line subcommands: configuration,
//! error codes, the labeling loop and the end-to-end run.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use log::{info, warn};
use serde::Deserialize;
use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::domain::{
    parse_family_config, parse_range_table, DomainError, RangeTable, SearchFamily, TimeWindow,
};
use crate::fetcher::{fetch_all, record_id, FetchContext, FetchError, FetchLimits, RetryPolicy};
use crate::gdelt::{scan_window, ArticleRef, GdeltError, ScanOptions};
use crate::relevance::{check_threshold, BayesModel, Class, RelevanceError, DEFAULT_THRESHOLD};
use crate::sentiment::{score_article, Lexicon, ScoringParams, SentimentError, ShifterTable};
use crate::store::{
    append_label, query_dir, read_labels, ArticleRecord, CountryMap, RecordFilter, Store,
    StoreError, COUNTRIES_FILE,
};
use crate::transport::{PageTransport, SearchTransport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {reason}")]
    Config { path: PathBuf, reason: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("no model at {0}; train one first")]
    MissingModel(PathBuf),
    #[error("store has no unlabeled records")]
    NoUnlabeled,
    #[error(transparent)]
    Gdelt(#[from] GdeltError),
    #[error(transparent)]
    Fetch(#[from] FetchError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Relevance(#[from] RelevanceError),
    #[error(transparent)]
    Sentiment(#[from] SentimentError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error("taxon {taxon}: {source}")]
    Taxon {
        taxon: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    /// Stable machine-readable code printed as `error:<code>:`.
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Domain(DomainError::InvalidWindow { .. }) => "invalid-window",
            CliError::Domain(_) => "config",
            CliError::MissingModel(_) => "missing-model",
            CliError::NoUnlabeled => "no-unlabeled",
            CliError::Gdelt(GdeltError::WindowTooWide { .. }) => "window-too-wide",
            CliError::Gdelt(GdeltError::Transport { .. }) => "transport",
            CliError::Gdelt(GdeltError::MalformedResponse { .. }) => "malformed-response",
            CliError::Fetch(_) => "fetch",
            CliError::Store(StoreError::CorruptLine { .. }) => "corrupt-store",
            CliError::Store(_) => "store",
            CliError::Relevance(RelevanceError::MissingClass(_)) => "missing-class",
            CliError::Relevance(_) => "model",
            CliError::Sentiment(_) => "lexicon",
            CliError::Analytics(AnalyticsError::UnscoredRecord(_)) => "unscored-record",
            CliError::Analytics(AnalyticsError::EmptySeries) => "empty-series",
            CliError::Analytics(_) => "analytics",
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::Taxon { source, .. } => source.code(),
        }
    }

    fn in_taxon(self, taxon: &str) -> CliError {
        CliError::Taxon {
            taxon: taxon.to_owned(),
            source: Box::new(self),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn load_families(path: &Path) -> Result<Vec<SearchFamily>, CliError> {
    Ok(parse_family_config(&read_file(path)?)?)
}

pub fn load_ranges(path: &Path) -> Result<RangeTable, CliError> {
    Ok(parse_range_table(&read_file(path)?)?)
}

pub fn load_model(path: &Path) -> Result<BayesModel, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingModel(path.to_owned()));
    }
    Ok(BayesModel::from_json(&read_file(path)?)?)
}

pub fn load_scorer(lexicon: &Path, shifters: &Path) -> Result<(Lexicon, ShifterTable), CliError> {
    let lex = Lexicon::parse_tsv(&read_file(lexicon)?)?;
    let sh = ShifterTable::parse_tsv(&read_file(shifters)?)?;
    sh.check_disjoint(Some(&lex))?;
    Ok((lex, sh))
}

/// Country mapping for a store: its `countries.tsv` sidecar, created from
/// the bundled table on first use.
pub fn store_countries(store_dir: &Path) -> Result<CountryMap, CliError> {
    let path = store_dir.join(COUNTRIES_FILE);
    if path.is_file() {
        return Ok(CountryMap::parse(&read_file(&path)?)?);
    }
    write_file(&path, crate::store::BUNDLED_COUNTRIES.as_bytes())?;
    Ok(CountryMap::bundled())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    families_path: PathBuf,
    ranges_path: PathBuf,
    lexicon_path: PathBuf,
    shifters_path: PathBuf,
    model_path: PathBuf,
    store_dir: PathBuf,
    #[serde(default)]
    fixtures_dir: Option<PathBuf>,
    #[serde(default = "default_threshold")]
    threshold: f64,
    window: TimeWindow,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

/// Everything `run` needs. Relative paths in the JSON file are resolved
/// against the file's directory.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub families_path: PathBuf,
    pub ranges_path: PathBuf,
    pub lexicon_path: PathBuf,
    pub shifters_path: PathBuf,
    pub model_path: PathBuf,
    pub store_dir: PathBuf,
    pub fixtures_dir: Option<PathBuf>,
    pub threshold: f64,
    pub window: TimeWindow,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = read_file(path)?;
        let bad = |reason: String| CliError::Config {
            path: path.to_owned(),
            reason,
        };
        let raw: RawConfig = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: PathBuf| -> Result<PathBuf, CliError> {
            if p.as_os_str().is_empty() {
                return Err(bad("empty path".into()));
            }
            Ok(if p.is_absolute() { p } else { base.join(p) })
        };
        let threshold = raw.threshold;
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(bad(format!("threshold {threshold} outside (0, 1)")));
        }
        Ok(PipelineConfig {
            families_path: resolve(raw.families_path)?,
            ranges_path: resolve(raw.ranges_path)?,
            lexicon_path: resolve(raw.lexicon_path)?,
            shifters_path: resolve(raw.shifters_path)?,
            model_path: resolve(raw.model_path)?,
            store_dir: resolve(raw.store_dir)?,
            fixtures_dir: raw.fixtures_dir.map(resolve).transpose()?,
            threshold,
            window: raw.window,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub scanned: usize,
    pub fetched: usize,
    pub relevant: usize,
    pub scored: usize,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "scanned={} fetched={} relevant={} scored={}",
            self.scanned, self.fetched, self.relevant, self.scored
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub best_effort: bool,
    pub now: DateTime<Utc>,
    pub retry: RetryPolicy,
    pub limits: FetchLimits,
}

/// Refs whose record is not yet in the store, in input order. Refs with
/// unusable URLs are dropped with a warning.
pub fn unseen_refs(refs: Vec<ArticleRef>, store: &Store) -> Vec<ArticleRef> {
    refs.into_iter()
        .filter(|r| match record_id(&r.url) {
            Some(id) => !store.contains(&id),
            None => {
                warn!("skipping ref with invalid url {}", r.url);
                false
            }
        })
        .collect()
}

/// Fetches `refs` and returns the successful records. Failures abort unless
/// `best_effort`, after the successful records have been handed back through
/// `keep` so completed work is not lost.
pub fn fetch_refs(
    refs: &[ArticleRef],
    pages: &dyn PageTransport,
    countries: &CountryMap,
    opts: &RunOptions,
    mut keep: impl FnMut(ArticleRecord) -> Result<(), CliError>,
) -> Result<usize, CliError> {
    let ctx = FetchContext {
        countries,
        now: opts.now,
        retry: opts.retry,
    };
    let mut first_err = None;
    let mut n = 0;
    let mut unmapped = BTreeSet::new();
    for result in fetch_all(refs, pages, &ctx, opts.limits) {
        match result {
            Ok(rec) => {
                if rec.source_country_iso.is_none() && !rec.source_country_raw.is_empty() {
                    unmapped.insert(rec.source_country_raw.clone());
                }
                keep(rec)?;
                n += 1;
            }
            Err(e) if opts.best_effort => warn!("skipping article: {e}"),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    for name in unmapped {
        warn!("source country {name:?} has no entry in {COUNTRIES_FILE}");
    }
    match first_err {
        Some(e) => Err(e.into()),
        None => Ok(n),
    }
}

/// Fills in relevance and, for relevant records, sentiment.
pub fn classify_and_score(
    rec: &mut ArticleRecord,
    model: &BayesModel,
    threshold: f64,
    lexicon: &Lexicon,
    shifters: &ShifterTable,
) {
    let doc = format!("{}\n{}", rec.title, rec.text);
    let (class, p) = model.classify(&doc, threshold);
    rec.relevant = Some(class == Class::Relevant);
    rec.relevance_posterior = Some(p);
    if class == Class::Relevant {
        let s = score_article(&rec.text, lexicon, shifters, &ScoringParams::default());
        rec.sentiment = Some(s.article_score);
    }
}

/// Scan, fetch, classify, score and append for every taxon in the config.
/// Records already in the store are not fetched again.
pub fn run_pipeline(
    config: &PipelineConfig,
    search: &dyn SearchTransport,
    pages: &dyn PageTransport,
    opts: &RunOptions,
) -> Result<RunSummary, CliError> {
    let model = load_model(&config.model_path)?;
    let threshold = check_threshold(config.threshold)?;
    let families = load_families(&config.families_path)?;
    load_ranges(&config.ranges_path)?;
    let (lexicon, shifters) = load_scorer(&config.lexicon_path, &config.shifters_path)?;
    let mut store = Store::open(&config.store_dir)?;
    let countries = store_countries(&config.store_dir)?;

    let mut summary = RunSummary::default();
    for family in &families {
        let taxon = family.taxon.as_str();
        let report = scan_window(
            family,
            config.window,
            search,
            ScanOptions {
                best_effort: opts.best_effort,
            },
        )
        .map_err(|e| CliError::from(e).in_taxon(taxon))?;
        summary.scanned += report.refs.len();
        let fresh = unseen_refs(report.refs, &store);
        info!("{taxon}: {} new of {} hits", fresh.len(), summary.scanned);
        fetch_refs(&fresh, pages, &countries, opts, |mut rec| {
            classify_and_score(&mut rec, &model, threshold, &lexicon, &shifters);
            if store.append_record(&rec)? {
                summary.fetched += 1;
                summary.relevant += usize::from(rec.relevant == Some(true));
                summary.scored += usize::from(rec.sentiment.is_some());
            }
            Ok(())
        })
        .map_err(|e| e.in_taxon(taxon))?;
    }
    Ok(summary)
}

/// Labeled records joined from a label file and a store, ordered by id.
pub fn labeled_records(
    labels: &Path,
    store_dir: &Path,
) -> Result<Vec<(ArticleRecord, Class)>, CliError> {
    let labels = read_labels(labels)?;
    let records = crate::store::snapshot_dir(store_dir)?.records;
    let mut out = Vec::with_capacity(labels.len());
    for (id, line) in labels {
        match records.get(&id) {
            Some(r) => out.push((r.clone(), line.class)),
            None => warn!("label for {id} has no record in the store"),
        }
    }
    Ok(out)
}

pub const PREVIEW_CHARS: usize = 600;

/// Interactive labeling over unlabeled store records, oldest first. Reads
/// one answer per line: `r` relevant, `i` irrelevant, `s` skip, `q` quit.
/// Each answer is appended to the label file before the next prompt.
pub fn label_loop<R: BufRead, W: Write>(
    store_dir: &Path,
    label_file: &Path,
    count: usize,
    input: &mut R,
    output: &mut W,
    now: impl Fn() -> DateTime<Utc>,
) -> Result<usize, CliError> {
    if count == 0 {
        return Ok(0);
    }
    let labeled = read_labels(label_file)?;
    let pending: Vec<ArticleRecord> = query_dir(store_dir, &RecordFilter::default())?
        .into_iter()
        .filter(|r| !labeled.contains_key(&r.id))
        .collect();
    if pending.is_empty() {
        return Err(CliError::NoUnlabeled);
    }
    let total = pending.len().min(count);
    let out_err = |source| CliError::Io {
        path: PathBuf::from("<terminal>"),
        source,
    };
    let mut written = 0;
    'records: for (i, rec) in pending.iter().take(total).enumerate() {
        let preview: String = rec.text.chars().take(PREVIEW_CHARS).collect();
        writeln!(
            output,
            "\n[{}/{}] {} ({})\n{}\n{}",
            i + 1,
            total,
            rec.title,
            rec.taxon,
            rec.url,
            preview
        )
        .map_err(out_err)?;
        loop {
            write!(output, "(r)elevant (i)rrelevant (s)kip (q)uit > ").map_err(out_err)?;
            output.flush().map_err(out_err)?;
            let mut line = String::new();
            if input.read_line(&mut line).map_err(out_err)? == 0 {
                break 'records;
            }
            let class = match line.trim().chars().next().map(|c| c.to_ascii_lowercase()) {
                Some('r') => Class::Relevant,
                Some('i') => Class::Irrelevant,
                Some('s') => continue 'records,
                Some('q') => break 'records,
                _ => continue,
            };
            append_label(label_file, &rec.id, class, now())?;
            written += 1;
            continue 'records;
        }
    }
    writeln!(output, "labeled {written}").map_err(out_err)?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::LABELS_FILE;
    use chrono::TimeZone;
    use std::io::Cursor;

    fn seed_store(dir: &Path, n: u8) {
        let mut store = Store::open(dir).unwrap();
        for i in 0..n {
            let mut r = crate::store::tests::record(i, 1 + u32::from(i), None);
            r.text = "x".repeat(700);
            store.append_record(&r).unwrap();
        }
    }

    fn at() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2020, 2, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn label_keys() {
        let dir = tempfile::tempdir().unwrap();
        seed_store(dir.path(), 5);
        let labels = dir.path().join(LABELS_FILE);
        let mut out = Vec::new();
        let n = label_loop(
            dir.path(),
            &labels,
            5,
            &mut Cursor::new("r\ni\ns\nr\nq\n"),
            &mut out,
            at,
        )
        .unwrap();
        assert_eq!(n, 3);
        let written = read_labels(&labels).unwrap();
        assert_eq!(written.len(), 3);
        let classes: Vec<Class> = written.values().map(|l| l.class).collect();
        assert_eq!(classes.iter().filter(|c| **c == Class::Relevant).count(), 2);
        // title + at most 600 text characters
        let shown = String::from_utf8(out).unwrap();
        assert!(shown.contains(&"x".repeat(600)));
        assert!(!shown.contains(&"x".repeat(601)));
    }

    #[test]
    fn label_resumes_after_labeled() {
        let dir = tempfile::tempdir().unwrap();
        seed_store(dir.path(), 3);
        let labels = dir.path().join(LABELS_FILE);
        let mut sink = Vec::new();
        assert_eq!(
            label_loop(
                dir.path(),
                &labels,
                2,
                &mut Cursor::new("r\nr\n"),
                &mut sink,
                at
            )
            .unwrap(),
            2
        );
        // unknown input is re-prompted, EOF stops
        assert_eq!(
            label_loop(
                dir.path(),
                &labels,
                9,
                &mut Cursor::new("x\ni\n"),
                &mut sink,
                at
            )
            .unwrap(),
            1
        );
        assert!(matches!(
            label_loop(
                dir.path(),
                &labels,
                1,
                &mut Cursor::new("r\n"),
                &mut sink,
                at
            ),
            Err(CliError::NoUnlabeled)
        ));
    }

    #[test]
    fn label_zero_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let labels = dir.path().join(LABELS_FILE);
        let mut out = Vec::new();
        assert_eq!(
            label_loop(
                dir.path(),
                &labels,
                0,
                &mut Cursor::new("r\n"),
                &mut out,
                at
            )
            .unwrap(),
            0
        );
        assert!(out.is_empty());
        let err = label_loop(
            dir.path(),
            &labels,
            3,
            &mut Cursor::new("r\n"),
            &mut out,
            at,
        )
        .unwrap_err();
        assert_eq!(err.code(), "no-unlabeled");
    }

    #[test]
    fn config_paths_resolve_relative_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(
            &path,
            r#"{"families_path": "f.json", "ranges_path": "/abs/r.json", "lexicon_path": "l.tsv",
                "shifters_path": "s.tsv", "model_path": "m.json", "store_dir": "store",
                "window": {"start": "2019-06-01T00:00:00Z", "end": "2019-06-02T00:00:00Z"}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.families_path, dir.path().join("f.json"));
        assert_eq!(cfg.ranges_path, PathBuf::from("/abs/r.json"));
        assert_eq!(cfg.threshold, 0.5);
        assert!(cfg.fixtures_dir.is_none());
    }

    #[test]
    fn config_rejects_bad_threshold() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        fs::write(
            &path,
            r#"{"families_path": "f", "ranges_path": "r", "lexicon_path": "l",
                "shifters_path": "s", "model_path": "m", "store_dir": "d", "threshold": 1.0,
                "window": {"start": "2019-06-01T00:00:00Z", "end": "2019-06-02T00:00:00Z"}}"#,
        )
        .unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap_err().code(), "config");
    }

    #[test]
    fn error_codes_pass_through_taxon_context() {
        let e = CliError::MissingModel("m.json".into()).in_taxon("tiger");
        assert_eq!(e.code(), "missing-model");
        assert!(e.to_string().starts_with("taxon tiger: "));
    }
}

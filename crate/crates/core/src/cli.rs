//! Command-line interface. Every subcommand prints its result on stdout and
//! fails with a single `error:<code>: <message>` line on stderr.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};

use crate::analytics::{
    country_stats, daily_counts, daily_mean_sentiment, domain_stats, render_chart, render_csv,
    AnalyticsError, ChartMetric, CsvRows, DailyStat,
};
use crate::domain::{parse_timestamp, RangeTable, TimeWindow};
use crate::fetcher::{FetchLimits, RetryPolicy};
use crate::gdelt::{scan_window, ArticleRef, ScanOptions};
use crate::pipeline::{
    fetch_refs, label_loop, labeled_records, load_families, load_model, load_ranges, read_file,
    run_pipeline, store_countries, unseen_refs, write_file, CliError, PipelineConfig, RunOptions,
};
use crate::relevance::{
    check_threshold, evaluate, holdout_split, BayesModel, Class, SplitOrder, DEFAULT_THRESHOLD,
};
use crate::sentiment::{
    default_lexicon, default_shifters, score_article, Lexicon, ScoringParams, ShifterTable,
};
use crate::store::{query_dir, snapshot_dir, ArticleRecord, RecordFilter, Store, LABELS_FILE};
use crate::transport::{
    FixturePages, FixtureSearch, LivePages, LiveSearch, PageTransport, SearchTransport, UreqClient,
};

pub const CLOCK_ENV: &str = "FAUNAWATCH_CLOCK";

#[derive(Debug, Parser)]
#[command(
    name = "faunawatch",
    version,
    about = "Monitor news coverage of traded wildlife"
)]
pub struct Cli {
    /// Fixed timestamp used for fetched_at/labeled_at instead of the system clock.
    #[arg(long, global = true, env = CLOCK_ENV, value_parser = parse_time)]
    pub clock: Option<DateTime<Utc>>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Query the news index and write the hits as NDJSON.
    Scan(ScanArgs),
    /// Fetch article pages for scanned hits into the store.
    Fetch(FetchArgs),
    /// Label unlabeled store records interactively.
    Label(LabelArgs),
    /// Train a relevance model from labeled records.
    Train(TrainArgs),
    /// Evaluate a model on the held-out part of the labels.
    Eval(EvalArgs),
    /// Classify stored records that have no relevance verdict.
    Classify(ClassifyArgs),
    /// Score sentiment of relevant records that have no score.
    Score(ScoreArgs),
    /// Write daily and per-country CSV reports.
    Report(ReportArgs),
    /// Write daily count and sentiment charts.
    Chart(ChartArgs),
    /// Scan, fetch, classify and score every taxon in a config.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    /// Window start (RFC 3339, YYYYMMDDHHMMSS or YYYY-MM-DD).
    #[arg(long, value_parser = parse_time)]
    pub start: DateTime<Utc>,
    /// Window end, exclusive.
    #[arg(long, value_parser = parse_time)]
    pub end: DateTime<Utc>,
}

impl WindowArgs {
    fn window(&self) -> Result<TimeWindow, CliError> {
        Ok(TimeWindow::new(self.start, self.end)?)
    }
}

#[derive(Debug, Args)]
pub struct NetArgs {
    /// Replay recorded responses from DIR instead of using the network.
    #[arg(long, value_name = "DIR")]
    pub fixtures: Option<PathBuf>,
    /// Log and skip failed queries and fetches instead of aborting.
    #[arg(long)]
    pub best_effort: bool,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub families: PathBuf,
    /// Restrict to these taxa (repeatable).
    #[arg(long)]
    pub taxon: Vec<String>,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub net: NetArgs,
    /// Output file for the hits.
    #[arg(long)]
    pub out: PathBuf,
    /// Also report how many hits are not yet in this store.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FetchArgs {
    /// NDJSON hits written by `scan`.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Label file; defaults to labels.ndjson in the store.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Fraction of labeled records held out for testing.
    #[arg(long, default_value_t = 0.25)]
    pub holdout: f64,
    /// Seed of the random split.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Hold out the most recent records instead of a random sample.
    #[arg(long, conflicts_with = "seed")]
    pub chronological: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Polarity lexicon TSV; the bundled lexicon when omitted.
    #[arg(long, requires = "shifters")]
    pub lexicon: Option<PathBuf>,
    /// Valence shifter TSV; the bundled table when omitted.
    #[arg(long, requires = "lexicon")]
    pub shifters: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    /// Taxa to report (repeatable); all taxa with relevant records by default.
    #[arg(long)]
    pub taxon: Vec<String>,
    /// Range table used to mark range countries.
    #[arg(long)]
    pub ranges: Option<PathBuf>,
    /// Group the spatial report by outlet domain instead of country.
    #[arg(long)]
    pub by_domain: bool,
}

#[derive(Debug, Args)]
pub struct ChartArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
    #[arg(long)]
    pub taxon: Vec<String>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub net: NetArgs,
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    parse_timestamp(s).map_err(|e| e.to_string())
}

pub const DAILY_REPORT: &str = "report_daily.csv";
pub const COUNTRY_REPORT: &str = "report_country.csv";
pub const COUNT_CHART: &str = "chart_counts.svg";
pub const SENTIMENT_CHART: &str = "chart_sentiment.svg";

struct Transports {
    search: Box<dyn SearchTransport>,
    pages: Box<dyn PageTransport>,
    retry: RetryPolicy,
    limits: FetchLimits,
}

/// Fixture replay skips retry back-off and per-host delays; there is no
/// remote host to be polite to.
fn transports(fixtures: Option<&Path>, cache_default: PathBuf) -> Transports {
    match fixtures {
        Some(dir) => Transports {
            search: Box::new(FixtureSearch::new(dir.join("gdelt"))),
            pages: Box::new(FixturePages::new(dir.join("pages"))),
            retry: RetryPolicy::immediate(),
            limits: FetchLimits {
                per_host_delay: Duration::ZERO,
                ..FetchLimits::default()
            },
        },
        None => Transports {
            search: Box::new(LiveSearch::new(UreqClient::new())),
            pages: Box::new(LivePages::new(
                UreqClient::new(),
                LivePages::<UreqClient>::cache_dir_from_env(Some(cache_default)),
            )),
            retry: RetryPolicy::default(),
            limits: FetchLimits::default(),
        },
    }
}

fn training_text(r: &ArticleRecord) -> String {
    format!("{}\n{}", r.title, r.text)
}

type Labeled = Vec<(ArticleRecord, Class)>;

/// (train, test, description of the split)
fn split_labeled(args: &SplitArgs) -> Result<(Labeled, Labeled, String), CliError> {
    if !(0.0..=1.0).contains(&args.holdout) {
        return Err(CliError::Usage(format!(
            "holdout {} outside [0, 1]",
            args.holdout
        )));
    }
    let mut items = labeled_records(&args.labels, &args.store)?;
    let (order, desc) = if args.chronological {
        items.sort_by(|a, b| {
            a.0.seen_date
                .cmp(&b.0.seen_date)
                .then_with(|| a.0.id.cmp(&b.0.id))
        });
        (SplitOrder::AsGiven, "split=chronological".to_owned())
    } else {
        (
            SplitOrder::Random { seed: args.seed },
            format!("split=random seed={}", args.seed),
        )
    };
    let (train, test) = holdout_split(items, args.holdout, order);
    Ok((train, test, desc))
}

fn taxa_or_present(requested: &[String], records: &[ArticleRecord]) -> Vec<String> {
    if !requested.is_empty() {
        return requested.to_vec();
    }
    records
        .iter()
        .map(|r| r.taxon.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn relevant_in(store: &Path, window: TimeWindow) -> Result<Vec<ArticleRecord>, CliError> {
    Ok(query_dir(
        store,
        &RecordFilter {
            taxa: None,
            window: Some(window),
            relevant_only: true,
        },
    )?)
}

/// Executes one parsed command. `input` feeds the labeling loop.
pub fn execute<R: BufRead, W: Write>(cli: Cli, input: &mut R, out: &mut W) -> Result<(), CliError> {
    let now = move || cli.clock.unwrap_or_else(Utc::now);
    let io = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match cli.command {
        Command::Scan(a) => {
            let window = a.window.window()?;
            let families = load_families(&a.families)?;
            for t in &a.taxon {
                if !families.iter().any(|f| &f.taxon == t) {
                    return Err(CliError::Usage(format!("unknown taxon {t}")));
                }
            }
            let net = transports(
                a.net.fixtures.as_deref(),
                PathBuf::from(".faunawatch-cache"),
            );
            let mut refs: Vec<ArticleRef> = Vec::new();
            for f in families
                .iter()
                .filter(|f| a.taxon.is_empty() || a.taxon.contains(&f.taxon))
            {
                let report = scan_window(
                    f,
                    window,
                    net.search.as_ref(),
                    ScanOptions {
                        best_effort: a.net.best_effort,
                    },
                )?;
                refs.extend(report.refs);
            }
            let mut body = String::new();
            for r in &refs {
                body.push_str(&serde_json::to_string(r).expect("ArticleRef serializes"));
                body.push('\n');
            }
            write_file(&a.out, body.as_bytes())?;
            match a.store {
                Some(dir) => {
                    let store = Store::open(dir)?;
                    let new = unseen_refs(refs.clone(), &store).len();
                    writeln!(out, "scanned={} new={new}", refs.len()).map_err(io)?;
                }
                None => writeln!(out, "scanned={}", refs.len()).map_err(io)?,
            }
        }
        Command::Fetch(a) => {
            let mut refs = Vec::new();
            for (i, line) in read_file(&a.refs)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: ArticleRef = serde_json::from_str(line).map_err(|e| CliError::Config {
                    path: a.refs.clone(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
                refs.push(r);
            }
            let mut store = Store::open(&a.store)?;
            let countries = store_countries(&a.store)?;
            let total = refs.len();
            let fresh = unseen_refs(refs, &store);
            let net = transports(a.net.fixtures.as_deref(), a.store.join("http-cache"));
            let opts = RunOptions {
                best_effort: a.net.best_effort,
                now: now(),
                retry: net.retry,
                limits: net.limits,
            };
            let mut fetched = 0;
            let skipped = total - fresh.len();
            fetch_refs(&fresh, net.pages.as_ref(), &countries, &opts, |rec| {
                fetched += usize::from(store.append_record(&rec)?);
                Ok(())
            })?;
            writeln!(out, "fetched={fetched} skipped={skipped}").map_err(io)?;
        }
        Command::Label(a) => {
            let labels = a.labels.unwrap_or_else(|| a.store.join(LABELS_FILE));
            label_loop(&a.store, &labels, a.count, input, out, now)?;
        }
        Command::Train(a) => {
            let (train, test, desc) = split_labeled(&a.split)?;
            let texts: Vec<(String, Class)> =
                train.iter().map(|(r, c)| (training_text(r), *c)).collect();
            let model = BayesModel::train(texts.iter().map(|(t, c)| (t.as_str(), *c)))?;
            write_file(&a.out, model.to_json().as_bytes())?;
            writeln!(out, "{desc} train={} test={}", train.len(), test.len()).map_err(io)?;
        }
        Command::Eval(a) => {
            let threshold = check_threshold(a.threshold)?;
            let model = load_model(&a.model)?;
            let (_, test, _) = split_labeled(&a.split)?;
            let texts: Vec<(String, Class)> =
                test.iter().map(|(r, c)| (training_text(r), *c)).collect();
            let report = evaluate(
                &model,
                texts.iter().map(|(t, c)| (t.as_str(), *c)),
                threshold,
            );
            writeln!(out, "{report}").map_err(io)?;
        }
        Command::Classify(a) => {
            let threshold = check_threshold(a.threshold)?;
            let model = load_model(&a.model)?;
            let pending: Vec<ArticleRecord> = snapshot_dir(&a.store)?
                .records
                .into_values()
                .filter(|r| r.relevant.is_none())
                .collect();
            let mut store = Store::open(&a.store)?;
            let mut relevant = 0;
            for mut rec in pending.iter().cloned() {
                let (class, p) = model.classify(&training_text(&rec), threshold);
                rec.relevant = Some(class == Class::Relevant);
                rec.relevance_posterior = Some(p);
                relevant += usize::from(class == Class::Relevant);
                store.append_version(&rec)?;
            }
            writeln!(out, "classified={} relevant={relevant}", pending.len()).map_err(io)?;
        }
        Command::Score(a) => {
            let (lexicon, shifters): (Lexicon, ShifterTable) = match (&a.lexicon, &a.shifters) {
                (Some(l), Some(s)) => crate::pipeline::load_scorer(l, s)?,
                _ => (default_lexicon(), default_shifters()),
            };
            let pending: Vec<ArticleRecord> = snapshot_dir(&a.store)?
                .records
                .into_values()
                .filter(|r| r.relevant == Some(true) && r.sentiment.is_none())
                .collect();
            let mut store = Store::open(&a.store)?;
            for mut rec in pending.iter().cloned() {
                rec.sentiment = Some(
                    score_article(&rec.text, &lexicon, &shifters, &ScoringParams::default())
                        .article_score,
                );
                store.append_version(&rec)?;
            }
            writeln!(out, "scored={}", pending.len()).map_err(io)?;
        }
        Command::Report(a) => {
            let window = a.window.window()?;
            let records = relevant_in(&a.store, window)?;
            let ranges: Option<RangeTable> = a.ranges.as_deref().map(load_ranges).transpose()?;
            let mut daily = Vec::new();
            let mut spatial = Vec::new();
            for taxon in taxa_or_present(&a.taxon, &records) {
                daily.extend(daily_mean_sentiment(&records, &taxon, &window)?);
                spatial.extend(if a.by_domain {
                    domain_stats(&records, &taxon)?
                } else {
                    country_stats(&records, &taxon, ranges.as_ref())?
                });
            }
            write_file(
                &a.out.join(DAILY_REPORT),
                &render_csv(CsvRows::Daily(&daily)),
            )?;
            write_file(
                &a.out.join(COUNTRY_REPORT),
                &render_csv(CsvRows::Country(&spatial)),
            )?;
            writeln!(out, "days={} groups={}", daily.len(), spatial.len()).map_err(io)?;
        }
        Command::Chart(a) => {
            let window = a.window.window()?;
            let records = relevant_in(&a.store, window)?;
            let taxa = taxa_or_present(&a.taxon, &records);
            if taxa.is_empty() {
                return Err(AnalyticsError::EmptySeries.into());
            }
            let mut counts: Vec<(String, Vec<DailyStat>)> = Vec::new();
            let mut means: Vec<(String, Vec<DailyStat>)> = Vec::new();
            for taxon in taxa {
                counts.push((taxon.clone(), daily_counts(&records, &taxon, &window)));
                means.push((
                    taxon.clone(),
                    daily_mean_sentiment(&records, &taxon, &window)?,
                ));
            }
            write_file(
                &a.out.join(COUNT_CHART),
                &render_chart(&counts, ChartMetric::Count)?,
            )?;
            write_file(
                &a.out.join(SENTIMENT_CHART),
                &render_chart(&means, ChartMetric::Sentiment)?,
            )?;
            writeln!(out, "series={}", counts.len()).map_err(io)?;
        }
        Command::Run(a) => {
            let mut config = PipelineConfig::load(&a.config)?;
            if a.net.fixtures.is_some() {
                config.fixtures_dir = a.net.fixtures.clone();
            }
            // fail before touching the network
            load_model(&config.model_path)?;
            let net = transports(
                config.fixtures_dir.as_deref(),
                config.store_dir.join("http-cache"),
            );
            let opts = RunOptions {
                best_effort: a.net.best_effort,
                now: now(),
                retry: net.retry,
                limits: net.limits,
            };
            let summary = run_pipeline(&config, net.search.as_ref(), net.pages.as_ref(), &opts)?;
            writeln!(out, "{summary}").map_err(io)?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T, R, W, E>(args: I, input: &mut R, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    R: BufRead,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = write!(out, "{}", e.render());
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    2
                } else {
                    0
                };
            }
            let rendered = e.render().to_string();
            let first = rendered
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let _ = writeln!(err, "error:usage: {first}");
            return 2;
        }
    };
    match execute(cli, input, out) {
        Ok(()) => 0,
        Err(e) => {
            let msg = error_chain(&e).replace('\n', " ");
            let _ = writeln!(err, "error:{}: {msg}", e.code());
            1
        }
    }
}

fn error_chain(e: &CliError) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let part = s.to_string();
        if !msg.contains(&part) {
            msg.push_str(": ");
            msg.push_str(&part);
        }
        source = s.source();
    }
    msg
}

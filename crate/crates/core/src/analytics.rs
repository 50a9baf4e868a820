//! Temporal and spatial aggregation of relevant articles, and the CSV/SVG
//! reports built from them. Days are UTC calendar days of `seen_date`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{Duration, NaiveDate};
use thiserror::Error;

use crate::domain::{RangeTable, TimeWindow};
use crate::store::ArticleRecord;

#[derive(Debug, Error, PartialEq)]
pub enum AnalyticsError {
    #[error("record {0} is relevant but has no sentiment score")]
    UnscoredRecord(String),
    #[error("empty window")]
    EmptyWindow,
    #[error("no country has a resolved range status")]
    NoResolvedCountries,
    #[error("nothing to chart")]
    EmptySeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyStat {
    pub date: NaiveDate,
    pub taxon: String,
    pub article_count: u64,
    pub mean_sentiment: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CountryStat {
    pub country: String,
    pub taxon: String,
    pub article_count: u64,
    pub mean_sentiment: Option<f64>,
    pub is_range: Option<bool>,
}

/// Every UTC calendar day touched by `[start, end)`.
pub fn window_days(window: &TimeWindow) -> Vec<NaiveDate> {
    let first = window.start().date_naive();
    let last = (window.end() - Duration::nanoseconds(1)).date_naive();
    first.iter_days().take_while(|d| *d <= last).collect()
}

struct DayBucket {
    count: u64,
    sum: f64,
    scored: u64,
    first_unscored: Option<String>,
}

fn bucket_by_day(
    records: &[ArticleRecord],
    taxon: &str,
    window: &TimeWindow,
) -> Vec<(NaiveDate, DayBucket)> {
    let mut buckets: BTreeMap<NaiveDate, DayBucket> = window_days(window)
        .into_iter()
        .map(|d| {
            (
                d,
                DayBucket {
                    count: 0,
                    sum: 0.0,
                    scored: 0,
                    first_unscored: None,
                },
            )
        })
        .collect();
    for r in records
        .iter()
        .filter(|r| r.taxon == taxon && window.contains(r.seen_date))
    {
        let b = buckets
            .get_mut(&r.seen_date.date_naive())
            .expect("in-window record falls on a window day");
        b.count += 1;
        match r.sentiment {
            Some(s) => {
                b.sum += s;
                b.scored += 1;
            }
            None => {
                b.first_unscored.get_or_insert_with(|| r.id.clone());
            }
        }
    }
    buckets.into_iter().collect()
}

/// Article counts per day of `window`, zero days included. A day's mean
/// sentiment is filled in only when all of that day's articles are scored.
pub fn daily_counts(records: &[ArticleRecord], taxon: &str, window: &TimeWindow) -> Vec<DailyStat> {
    bucket_by_day(records, taxon, window)
        .into_iter()
        .map(|(date, b)| DailyStat {
            date,
            taxon: taxon.to_owned(),
            article_count: b.count,
            mean_sentiment: (b.count > 0 && b.scored == b.count).then(|| b.sum / b.count as f64),
        })
        .collect()
}

/// Per-day mean article sentiment; every record must be scored.
pub fn daily_mean_sentiment(
    records: &[ArticleRecord],
    taxon: &str,
    window: &TimeWindow,
) -> Result<Vec<DailyStat>, AnalyticsError> {
    bucket_by_day(records, taxon, window)
        .into_iter()
        .map(|(date, b)| {
            if let Some(id) = b.first_unscored {
                return Err(AnalyticsError::UnscoredRecord(id));
            }
            Ok(DailyStat {
                date,
                taxon: taxon.to_owned(),
                article_count: b.count,
                mean_sentiment: (b.count > 0).then(|| b.sum / b.count as f64),
            })
        })
        .collect()
}

/// Fraction of days with at least one article.
pub fn coverage_fraction(daily: &[DailyStat]) -> Result<f64, AnalyticsError> {
    if daily.is_empty() {
        return Err(AnalyticsError::EmptyWindow);
    }
    let covered = daily.iter().filter(|d| d.article_count > 0).count();
    Ok(covered as f64 / daily.len() as f64)
}

fn grouped_stats<K>(
    records: &[ArticleRecord],
    taxon: &str,
    key: K,
    range: impl Fn(&ArticleRecord) -> Option<bool>,
) -> Result<Vec<CountryStat>, AnalyticsError>
where
    K: Fn(&ArticleRecord) -> String,
{
    let mut groups: BTreeMap<String, (u64, f64, Option<bool>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.taxon == taxon) {
        let s = r
            .sentiment
            .ok_or_else(|| AnalyticsError::UnscoredRecord(r.id.clone()))?;
        let g = groups.entry(key(r)).or_insert((0, 0.0, range(r)));
        g.0 += 1;
        g.1 += s;
    }
    Ok(groups
        .into_iter()
        .map(|(country, (n, sum, is_range))| CountryStat {
            country,
            taxon: taxon.to_owned(),
            article_count: n,
            mean_sentiment: Some(sum / n as f64),
            is_range,
        })
        .collect())
}

/// Counts and mean sentiment per source country (alpha-2 when mapped, the
/// raw index string otherwise), sorted by country.
pub fn country_stats(
    records: &[ArticleRecord],
    taxon: &str,
    ranges: Option<&RangeTable>,
) -> Result<Vec<CountryStat>, AnalyticsError> {
    grouped_stats(
        records,
        taxon,
        |r| {
            r.source_country_iso
                .clone()
                .unwrap_or_else(|| r.source_country_raw.clone())
        },
        |r| {
            let iso = r.source_country_iso.as_deref()?;
            ranges?.is_range(taxon, iso)
        },
    )
}

/// As [`country_stats`] but grouped by outlet hostname; range status is
/// never resolved.
pub fn domain_stats(
    records: &[ArticleRecord],
    taxon: &str,
) -> Result<Vec<CountryStat>, AnalyticsError> {
    grouped_stats(records, taxon, ArticleRecord::domain, |_| None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSplit {
    pub range_mean: Option<f64>,
    pub nonrange_mean: Option<f64>,
    pub range_articles: u64,
    pub nonrange_articles: u64,
}

/// Article-weighted mean sentiment over range and non-range countries.
/// Countries with unresolved status are ignored.
pub fn range_split(stats: &[CountryStat]) -> Result<RangeSplit, AnalyticsError> {
    let (mut rn, mut rs, mut nn, mut ns) = (0u64, 0.0, 0u64, 0.0);
    let mut resolved = false;
    for s in stats {
        let (Some(is_range), Some(mean)) = (s.is_range, s.mean_sentiment) else {
            continue;
        };
        resolved = true;
        let weighted = mean * s.article_count as f64;
        if is_range {
            rn += s.article_count;
            rs += weighted;
        } else {
            nn += s.article_count;
            ns += weighted;
        }
    }
    if !resolved {
        return Err(AnalyticsError::NoResolvedCountries);
    }
    let mean = |n: u64, s: f64| (n > 0).then(|| s / n as f64);
    Ok(RangeSplit {
        range_mean: mean(rn, rs),
        nonrange_mean: mean(nn, ns),
        range_articles: rn,
        nonrange_articles: nn,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum CsvRows<'a> {
    Daily(&'a [DailyStat]),
    Country(&'a [CountryStat]),
}

pub const DAILY_HEADER: [&str; 4] = ["date", "taxon", "count", "mean_sentiment"];
pub const COUNTRY_HEADER: [&str; 5] = ["country", "taxon", "count", "mean_sentiment", "is_range"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// RFC 4180 CSV with CRLF line endings and six-decimal floats. Absent values
/// are empty fields.
pub fn render_csv(rows: CsvRows<'_>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, rec: &[String]| {
        w.write_record(rec).expect("in-memory CSV write")
    };
    match rows {
        CsvRows::Daily(stats) => {
            w.write_record(DAILY_HEADER).expect("in-memory CSV write");
            for s in stats {
                write(
                    &mut w,
                    &[
                        s.date.format("%Y-%m-%d").to_string(),
                        s.taxon.clone(),
                        s.article_count.to_string(),
                        fmt_opt(s.mean_sentiment),
                    ],
                );
            }
        }
        CsvRows::Country(stats) => {
            w.write_record(COUNTRY_HEADER).expect("in-memory CSV write");
            for s in stats {
                write(
                    &mut w,
                    &[
                        s.country.clone(),
                        s.taxon.clone(),
                        s.article_count.to_string(),
                        fmt_opt(s.mean_sentiment),
                        s.is_range.map(|b| b.to_string()).unwrap_or_default(),
                    ],
                );
            }
        }
    }
    w.into_inner().expect("in-memory CSV flush")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartMetric {
    Count,
    Sentiment,
}

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn padded_range(lo: f64, hi: f64) -> (f64, f64) {
    let span = hi - lo;
    if span > 0.0 {
        (lo - 0.05 * span, hi + 0.05 * span)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Line chart of one metric for several taxa: one colour per series, a
/// polyline per run of consecutive values. Counts plot zero days as zero;
/// sentiment leaves a gap on days without articles.
pub fn render_chart(
    series: &[(String, Vec<DailyStat>)],
    metric: ChartMetric,
) -> Result<Vec<u8>, AnalyticsError> {
    if series.is_empty() || series.iter().all(|(_, s)| s.is_empty()) {
        return Err(AnalyticsError::EmptySeries);
    }
    let value = |d: &DailyStat| match metric {
        ChartMetric::Count => Some(d.article_count as f64),
        ChartMetric::Sentiment => d.mean_sentiment.filter(|_| d.article_count > 0),
    };
    let dates: Vec<NaiveDate> = series
        .iter()
        .flat_map(|(_, s)| s.iter().map(|d| d.date))
        .collect();
    let first = *dates.iter().min().expect("nonempty");
    let last = *dates.iter().max().expect("nonempty");
    let values: Vec<f64> = series
        .iter()
        .flat_map(|(_, s)| s.iter().filter_map(value))
        .collect();
    let (ylo, yhi) = if values.is_empty() {
        padded_range(0.0, 0.0)
    } else {
        padded_range(
            values.iter().copied().fold(f64::INFINITY, f64::min),
            values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    };
    let day_span = (last - first).num_days() as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_of = |d: NaiveDate| {
        if day_span == 0.0 {
            LEFT + plot_w / 2.0
        } else {
            LEFT + plot_w * (d - first).num_days() as f64 / day_span
        }
    };
    let y_of = |v: f64| TOP + plot_h * (yhi - v) / (yhi - ylo);

    let title = match metric {
        ChartMetric::Count => "Articles per day",
        ChartMetric::Sentiment => "Mean article sentiment per day",
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="16">{title}</text>"#,
        LEFT + plot_w / 2.0
    );
    // axes
    let (x0, x1, y0, y1) = (LEFT, LEFT + plot_w, TOP, TOP + plot_h);
    let _ = writeln!(
        svg,
        r##"<g stroke="#000" stroke-width="1"><line x1="{x0:.2}" y1="{y1:.2}" x2="{x1:.2}" y2="{y1:.2}"/><line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/></g>"##
    );
    for frac in [0.0, 0.5, 1.0] {
        let v = ylo + (yhi - ylo) * frac;
        let y = y_of(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="#000"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"##,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    if metric == ChartMetric::Sentiment && ylo < 0.0 && yhi > 0.0 {
        let y = y_of(0.0);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##
        );
    }
    let mut labelled = vec![first];
    if last != first {
        labelled.push(last);
    }
    for d in labelled {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x_of(d),
            y1 + 20.0,
            d.format("%Y-%m-%d")
        );
    }

    for (i, (taxon, stats)) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let mut sorted: Vec<&DailyStat> = stats.iter().collect();
        sorted.sort_by_key(|d| d.date);
        let mut runs: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for d in sorted {
            match value(d) {
                Some(v) => runs
                    .last_mut()
                    .expect("nonempty")
                    .push((x_of(d.date), y_of(v))),
                None if !runs.last().expect("nonempty").is_empty() => runs.push(Vec::new()),
                None => {}
            }
        }
        let _ = writeln!(svg, r#"<g data-taxon="{}">"#, escape_xml(taxon));
        for run in runs.iter().filter(|r| !r.is_empty()) {
            let points: Vec<String> = run.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
                points.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 20.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{lx:.2}" y="{:.2}" width="14" height="4" fill="{colour}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            ly - 4.0,
            lx + 20.0,
            ly + 2.0,
            escape_xml(taxon)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg.into_bytes())
}

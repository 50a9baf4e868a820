//! Search side of the pipeline: builds one query per qualifying keyword,
//! runs it against the GDELT DOC 2.0 ArtList endpoint (or a fixture replay),
//! and merges the hits into a deduplicated list of [`ArticleRef`]s.

use std::collections::HashSet;

use chrono::{DateTime, NaiveDateTime, Utc};
use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use crate::domain::{SearchFamily, TimeWindow};
use crate::transport::{SearchTransport, TransportError};

/// Maximum records the DOC API returns for one request.
pub const MAX_RECORDS: u32 = 250;

/// Longest window the live index can search.
pub const LIVE_HORIZON_HOURS: i64 = 72;

pub const DOC_API_ENDPOINT: &str = "https://api.gdeltproject.org/api/v2/doc/doc";

#[derive(Debug, Error)]
pub enum GdeltError {
    #[error("window of {hours}h exceeds the {LIVE_HORIZON_HOURS}h live search horizon")]
    WindowTooWide { hours: i64 },
    #[error("query `{query}`: {source}")]
    Transport {
        query: String,
        #[source]
        source: TransportError,
    },
    #[error("malformed ArtList response{}: {reason}", query.as_ref().map(|q| format!(" for `{q}`")).unwrap_or_default())]
    MalformedResponse {
        query: Option<String>,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub text: String,
    pub window: TimeWindow,
    pub max_records: u32,
    /// The qualifying keyword this query was built from.
    pub keyword: String,
}

impl Query {
    /// Full DOC API request URL for the live endpoint.
    pub fn request_url(&self) -> String {
        let url = Url::parse_with_params(
            DOC_API_ENDPOINT,
            &[
                ("query", self.text.as_str()),
                ("mode", "ArtList"),
                ("format", "json"),
                (
                    "startdatetime",
                    &crate::domain::format_compact(self.window.start()),
                ),
                (
                    "enddatetime",
                    &crate::domain::format_compact(self.window.end()),
                ),
                ("maxrecords", &self.max_records.to_string()),
                ("sort", "DateAsc"),
            ],
        )
        .expect("endpoint is a valid URL");
        url.to_string()
    }
}

/// One hit from the news index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleRef {
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobile_url: Option<String>,
    pub title: String,
    pub seen_date: DateTime<Utc>,
    pub source_country: String,
    pub language: String,
    pub domain: String,
    pub taxon: String,
    pub matched_keyword: String,
}

/// One query per unique qualifying keyword: `<main> <additional> sourcelang:eng`.
pub fn build_queries(family: &SearchFamily, window: TimeWindow) -> Vec<Query> {
    let mut seen = HashSet::new();
    family
        .additional_keywords
        .iter()
        .filter(|kw| seen.insert(kw.as_str()))
        .map(|kw| Query {
            text: format!("{} {} sourcelang:eng", family.main_keyword, kw),
            window,
            max_records: MAX_RECORDS,
            keyword: kw.clone(),
        })
        .collect()
}

#[derive(Deserialize)]
struct ArtList {
    #[serde(default)]
    articles: Vec<RawArticle>,
}

#[derive(Deserialize)]
struct RawArticle {
    url: Option<String>,
    url_mobile: Option<String>,
    title: Option<String>,
    seendate: Option<String>,
    domain: Option<String>,
    language: Option<String>,
    sourcecountry: Option<String>,
}

/// Result of decoding one ArtList document.
#[derive(Debug, Clone, Default)]
pub struct ParsedArtList {
    pub refs: Vec<ArticleRef>,
    /// Entries dropped because they lacked a usable `url` or `seendate`.
    pub skipped: usize,
}

/// Decodes an ArtList JSON body. Taxon and keyword are left empty; the
/// scanner fills them in.
pub fn parse_artlist(body: &[u8]) -> Result<ParsedArtList, GdeltError> {
    // The API answers an empty result set with `{}`, and occasionally with
    // an entirely empty body.
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(ParsedArtList::default());
    }
    let list: ArtList =
        serde_json::from_slice(body).map_err(|e| GdeltError::MalformedResponse {
            query: None,
            reason: e.to_string(),
        })?;
    let mut out = ParsedArtList::default();
    for raw in list.articles {
        let Some(url) = raw.url.filter(|u| is_absolute_http(u)) else {
            out.skipped += 1;
            continue;
        };
        let Some(seen_date) = raw.seendate.as_deref().and_then(parse_seendate) else {
            warn!("dropping ArtList entry with unparseable seendate: {url}");
            out.skipped += 1;
            continue;
        };
        let mobile_url = raw.url_mobile.filter(|u| !u.trim().is_empty());
        let domain = raw
            .domain
            .filter(|d| !d.is_empty())
            .or_else(|| Url::parse(&url).ok()?.host_str().map(str::to_owned))
            .unwrap_or_default();
        out.refs.push(ArticleRef {
            url,
            mobile_url,
            title: raw.title.unwrap_or_default(),
            seen_date,
            source_country: raw.sourcecountry.unwrap_or_default(),
            language: raw.language.unwrap_or_default(),
            domain,
            taxon: String::new(),
            matched_keyword: String::new(),
        });
    }
    if out.skipped > 0 {
        warn!("skipped {} ArtList entries without a url", out.skipped);
    }
    Ok(out)
}

fn parse_seendate(s: &str) -> Option<DateTime<Utc>> {
    NaiveDateTime::parse_from_str(s.trim(), "%Y%m%dT%H%M%SZ")
        .ok()
        .map(|t| t.and_utc())
}

pub(crate) fn is_absolute_http(s: &str) -> bool {
    Url::parse(s)
        .map(|u| matches!(u.scheme(), "http" | "https") && u.host_str().is_some())
        .unwrap_or(false)
}

/// Canonical form of an article URL, used both as the dedup key and as the
/// input to record identity hashing.
///
/// Scheme is forced to `https` (http/https variants collapse), scheme and host
/// are lowercased, the fragment and any `utm_*` query parameters are dropped,
/// and a trailing slash on the path is removed. Returns `None` for anything
/// that is not an absolute http(s) URL.
pub fn normalize_url(raw: &str) -> Option<String> {
    let url = Url::parse(raw.trim()).ok()?;
    if !matches!(url.scheme(), "http" | "https") {
        return None;
    }
    let host = url.host_str()?.to_ascii_lowercase();
    let mut out = format!("https://{host}");
    if let Some(port) = url.port() {
        if port != 80 && port != 443 {
            out.push_str(&format!(":{port}"));
        }
    }
    out.push_str(url.path().trim_end_matches('/'));
    if let Some(query) = url.query() {
        let kept: Vec<&str> = query
            .split('&')
            .filter(|pair| {
                let name = pair.split('=').next().unwrap_or("");
                !name.is_empty() && !name.to_ascii_lowercase().starts_with("utm_")
            })
            .collect();
        if !kept.is_empty() {
            out.push('?');
            out.push_str(&kept.join("&"));
        }
    }
    Some(out)
}

/// Keeps the first occurrence of each normalized URL, in input order.
pub fn dedupe_refs(refs: Vec<ArticleRef>) -> Vec<ArticleRef> {
    let mut seen = HashSet::new();
    refs.into_iter()
        .filter(|r| {
            let key = normalize_url(&r.url).unwrap_or_else(|| r.url.clone());
            seen.insert(key)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    /// Log and skip failed queries instead of aborting the scan.
    pub best_effort: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ScanReport {
    pub refs: Vec<ArticleRef>,
    pub skipped_entries: usize,
    pub out_of_window: usize,
    pub failed_queries: Vec<String>,
}

/// Runs every query of `family` over `window` and merges the results.
///
/// Output order is query order, then response order, with duplicates removed
/// after tagging so each surviving ref carries the first keyword that found it.
pub fn scan_window(
    family: &SearchFamily,
    window: TimeWindow,
    transport: &dyn SearchTransport,
    opts: ScanOptions,
) -> Result<ScanReport, GdeltError> {
    if transport.is_live() {
        let hours = window.duration().num_seconds().div_euclid(3600)
            + i64::from(window.duration().num_seconds() % 3600 != 0);
        if hours > LIVE_HORIZON_HOURS {
            return Err(GdeltError::WindowTooWide { hours });
        }
    }
    let mut report = ScanReport::default();
    let mut all = Vec::new();
    for query in build_queries(family, window) {
        let parsed = transport
            .artlist(&family.taxon, &query)
            .map_err(|source| GdeltError::Transport {
                query: query.text.clone(),
                source,
            })
            .and_then(|body| {
                parse_artlist(&body).map_err(|e| match e {
                    GdeltError::MalformedResponse { reason, .. } => GdeltError::MalformedResponse {
                        query: Some(query.text.clone()),
                        reason,
                    },
                    other => other,
                })
            });
        let parsed = match parsed {
            Ok(p) => p,
            Err(e) if opts.best_effort => {
                warn!("skipping failed query: {e}");
                report.failed_queries.push(query.text.clone());
                continue;
            }
            Err(e) => return Err(e),
        };
        if parsed.refs.len() + parsed.skipped >= query.max_records as usize {
            warn!(
                "query `{}` returned {} entries (page limit); use a narrower window",
                query.text, query.max_records
            );
        }
        report.skipped_entries += parsed.skipped;
        for mut r in parsed.refs {
            if !window.contains_inclusive(r.seen_date) {
                report.out_of_window += 1;
                continue;
            }
            r.taxon = family.taxon.clone();
            r.matched_keyword = query.keyword.clone();
            all.push(r);
        }
    }
    if report.out_of_window > 0 {
        warn!(
            "dropped {} hits dated outside {window}",
            report.out_of_window
        );
    }
    report.refs = dedupe_refs(all);
    Ok(report)
}

//! Article retrieval and plain-text extraction.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use ego_tree::NodeRef;
use log::{debug, warn};
use scraper::{Html, Node};
use thiserror::Error;
use url::Url;

use crate::gdelt::{is_absolute_http, normalize_url, ArticleRef};
use crate::store::{ArticleRecord, CountryMap};
use crate::transport::{sha256_hex, PageTransport, TransportError};

/// Paragraphs shorter than this (in characters) are treated as boilerplate.
pub const MIN_PARAGRAPH_CHARS: usize = 25;

const BLOCK_TAGS: &[&str] = &["p", "h1", "h2", "h3", "li", "blockquote"];
const DROPPED_TAGS: &[&str] = &[
    "script", "style", "nav", "header", "footer", "aside", "form", "noscript", "template",
];
const BREAKING_TAGS: &[&str] = &[
    "br",
    "div",
    "p",
    "li",
    "ul",
    "ol",
    "td",
    "th",
    "tr",
    "table",
    "section",
    "article",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "blockquote",
    "pre",
    "dd",
    "dt",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedPage {
    pub final_url: String,
    pub status: u16,
    pub body: Vec<u8>,
    pub content_type: String,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("HTTP {status} from {url}")]
    Http { status: u16, url: String },
    #[error("non-HTML content type `{0}`")]
    NonHtmlContent(String),
    #[error("no article text found")]
    EmptyDocument,
    #[error("invalid article url `{0}`")]
    InvalidUrl(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Mobile URL when present and valid, else the desktop URL.
pub fn select_fetch_url(r: &ArticleRef) -> &str {
    match r.mobile_url.as_deref() {
        Some(m) if is_absolute_http(m) => m,
        _ => &r.url,
    }
}

/// Strips markup from an HTML document and returns its running text, one
/// paragraph per block element, paragraphs separated by a blank line.
pub fn extract_text(html: &[u8]) -> Result<String, FetchError> {
    extract_text_with_charset(html, None)
}

/// As [`extract_text`], honouring a charset from a `Content-Type` header.
pub fn extract_text_with_charset(
    html: &[u8],
    content_type: Option<&str>,
) -> Result<String, FetchError> {
    let decoded = decode_html(html, content_type);
    let doc = Html::parse_document(&decoded);
    let mut paragraphs = Vec::new();
    collect_blocks(doc.tree.root(), &mut paragraphs);
    let kept: Vec<String> = paragraphs
        .into_iter()
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|p| p.chars().count() >= MIN_PARAGRAPH_CHARS)
        .collect();
    if kept.is_empty() {
        return Err(FetchError::EmptyDocument);
    }
    Ok(kept.join("\n\n"))
}

fn element_name<'a>(node: &NodeRef<'a, Node>) -> Option<&'a str> {
    match node.value() {
        Node::Element(e) => Some(e.name()),
        _ => None,
    }
}

fn collect_blocks(node: NodeRef<'_, Node>, out: &mut Vec<String>) {
    for child in node.children() {
        match element_name(&child) {
            Some(name) if DROPPED_TAGS.contains(&name) => {}
            Some(name) if BLOCK_TAGS.contains(&name) => {
                let mut text = String::new();
                collect_text(child, &mut text);
                out.push(text);
            }
            _ => collect_blocks(child, out),
        }
    }
}

fn collect_text(node: NodeRef<'_, Node>, out: &mut String) {
    for child in node.children() {
        match child.value() {
            Node::Text(t) => out.push_str(t),
            Node::Element(e) => {
                let name = e.name();
                if DROPPED_TAGS.contains(&name) {
                    continue;
                }
                let breaks = BREAKING_TAGS.contains(&name);
                if breaks {
                    out.push(' ');
                }
                collect_text(child, out);
                if breaks {
                    out.push(' ');
                }
            }
            _ => {}
        }
    }
}

/// Decodes page bytes. A charset from the header wins, then a `<meta>`
/// declaration in the first kilobyte; everything else is lossy UTF-8.
pub fn decode_html(bytes: &[u8], content_type: Option<&str>) -> String {
    let label = content_type
        .and_then(charset_param)
        .or_else(|| sniff_meta_charset(bytes));
    if let Some(enc) = label.and_then(|l| encoding_rs::Encoding::for_label(l.as_bytes())) {
        if enc != encoding_rs::UTF_8 {
            let (text, _, _) = enc.decode(bytes);
            return text.into_owned();
        }
    }
    String::from_utf8_lossy(bytes).into_owned()
}

fn charset_param(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|part| {
        let (k, v) = part.split_once('=')?;
        k.trim()
            .eq_ignore_ascii_case("charset")
            .then(|| v.trim().trim_matches(['"', '\'']).to_owned())
    })
}

fn sniff_meta_charset(bytes: &[u8]) -> Option<String> {
    let head = &bytes[..bytes.len().min(1024)];
    let head = String::from_utf8_lossy(head).to_ascii_lowercase();
    let mut rest = head.as_str();
    while let Some(pos) = rest.find("<meta") {
        rest = &rest[pos + 5..];
        let tag = &rest[..rest.find('>').unwrap_or(rest.len())];
        if let Some(cpos) = tag.find("charset=") {
            let value: String = tag[cpos + 8..]
                .trim_start_matches(['"', '\''])
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | ':'))
                .collect();
            if !value.is_empty() {
                return Some(value);
            }
        }
    }
    None
}

fn is_html(content_type: &str) -> bool {
    let mime = content_type
        .split(';')
        .next()
        .unwrap_or("")
        .trim()
        .to_ascii_lowercase();
    mime == "text/html" || mime == "application/xhtml+xml"
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 2,
            base_delay: Duration::from_secs(2),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; for fixture replay.
    pub fn immediate() -> Self {
        RetryPolicy {
            retries: 2,
            base_delay: Duration::ZERO,
        }
    }
}

/// Per-run inputs to [`fetch_article`].
#[derive(Debug, Clone, Copy)]
pub struct FetchContext<'a> {
    pub countries: &'a CountryMap,
    pub now: DateTime<Utc>,
    pub retry: RetryPolicy,
}

/// Record identity: SHA-256 hex of the normalized URL.
pub fn record_id(url: &str) -> Option<String> {
    normalize_url(url).map(|n| sha256_hex(&n))
}

/// Retrieves one article and builds its unclassified, unscored record.
pub fn fetch_article(
    r: &ArticleRef,
    transport: &dyn PageTransport,
    ctx: &FetchContext<'_>,
) -> Result<ArticleRecord, FetchError> {
    let id = record_id(&r.url).ok_or_else(|| FetchError::InvalidUrl(r.url.clone()))?;
    let target = select_fetch_url(r);
    let page = get_with_retry(target, transport, ctx.retry)?;
    if !is_html(&page.content_type) {
        return Err(FetchError::NonHtmlContent(page.content_type));
    }
    let text = extract_text_with_charset(&page.body, Some(&page.content_type))?;
    Ok(ArticleRecord {
        id,
        taxon: r.taxon.clone(),
        url: r.url.clone(),
        fetched_url: page.final_url,
        seen_date: r.seen_date,
        source_country_raw: r.source_country.clone(),
        source_country_iso: ctx.countries.resolve(&r.source_country),
        language: r.language.clone(),
        title: r.title.clone(),
        text,
        fetched_at: ctx.now,
        relevant: None,
        relevance_posterior: None,
        sentiment: None,
    })
}

fn get_with_retry(
    url: &str,
    transport: &dyn PageTransport,
    retry: RetryPolicy,
) -> Result<FetchedPage, FetchError> {
    let mut attempt = 0;
    loop {
        let outcome = match transport.get(url) {
            Ok(page) if (200..300).contains(&page.status) => return Ok(page),
            Ok(page) => FetchError::Http {
                status: page.status,
                url: url.to_owned(),
            },
            Err(e) => FetchError::Transport(e),
        };
        if attempt >= retry.retries {
            return Err(outcome);
        }
        let delay = retry.base_delay * 2u32.pow(attempt);
        debug!(
            "attempt {} for {url} failed ({outcome}); retrying in {delay:?}",
            attempt + 1
        );
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        attempt += 1;
    }
}

/// Politeness limits for concurrent fetching.
#[derive(Debug, Clone, Copy)]
pub struct FetchLimits {
    pub max_concurrent: usize,
    pub per_host_delay: Duration,
}

impl Default for FetchLimits {
    fn default() -> Self {
        FetchLimits {
            max_concurrent: 4,
            per_host_delay: Duration::from_secs(1),
        }
    }
}

#[derive(Default)]
struct HostState {
    busy: bool,
    last: Option<Instant>,
}

/// One request in flight per host, spaced by a minimum delay.
struct HostGate {
    delay: Duration,
    hosts: Mutex<HashMap<String, HostState>>,
    freed: Condvar,
}

impl HostGate {
    fn acquire(&self, host: &str) {
        let mut hosts = self.hosts.lock().expect("host gate");
        loop {
            let state = hosts.entry(host.to_owned()).or_default();
            if !state.busy {
                let wait = state
                    .last
                    .map(|t| self.delay.saturating_sub(t.elapsed()))
                    .unwrap_or_default();
                state.busy = true;
                drop(hosts);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
                return;
            }
            hosts = self.freed.wait(hosts).expect("host gate");
        }
    }

    fn release(&self, host: &str) {
        let mut hosts = self.hosts.lock().expect("host gate");
        if let Some(state) = hosts.get_mut(host) {
            state.busy = false;
            state.last = Some(Instant::now());
        }
        self.freed.notify_all();
    }
}

/// Fetches every ref concurrently under `limits`; results are returned in
/// input order.
pub fn fetch_all(
    refs: &[ArticleRef],
    transport: &dyn PageTransport,
    ctx: &FetchContext<'_>,
    limits: FetchLimits,
) -> Vec<Result<ArticleRecord, FetchError>> {
    let gate = HostGate {
        delay: limits.per_host_delay,
        hosts: Mutex::new(HashMap::new()),
        freed: Condvar::new(),
    };
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<ArticleRecord, FetchError>>>> =
        refs.iter().map(|_| Mutex::new(None)).collect();
    let workers = limits.max_concurrent.max(1).min(refs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(r) = refs.get(i) else { break };
                let host = Url::parse(select_fetch_url(r))
                    .ok()
                    .and_then(|u| u.host_str().map(str::to_owned))
                    .unwrap_or_default();
                gate.acquire(&host);
                let result = fetch_article(r, transport, ctx);
                gate.release(&host);
                if let Err(e) = &result {
                    warn!("fetch failed for {}: {e}", r.url);
                }
                *slots[i].lock().expect("slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot").expect("every slot filled"))
        .collect()
}

//! Injected I/O capabilities: the search endpoint and page retrieval, each
//! with a live HTTP implementation and a byte-exact fixture replay.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fetcher::FetchedPage;
use crate::gdelt::{normalize_url, Query};

pub const USER_AGENT: &str = "faunawatch/1.0 (research crawler)";

/// Environment variable overriding the live HTTP cache directory.
pub const CACHE_ENV: &str = "FAUNAWATCH_CACHE";

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("request to {url} failed: {reason}")]
    Network { url: String, reason: String },
    #[error("no fixture at {}", path.display())]
    MissingFixture { path: PathBuf },
    #[error("reading fixture {}: {source}", path.display())]
    FixtureIo {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot replay invalid url `{0}`")]
    InvalidUrl(String),
}

/// Source of ArtList documents.
pub trait SearchTransport: Send + Sync {
    /// Live transports are subject to the index's search horizon.
    fn is_live(&self) -> bool;

    fn artlist(&self, taxon: &str, query: &Query) -> Result<Vec<u8>, TransportError>;
}

/// Source of article pages.
pub trait PageTransport: Send + Sync {
    fn is_live(&self) -> bool;

    fn get(&self, url: &str) -> Result<FetchedPage, TransportError>;
}

/// Lowercase hex SHA-256 of a string.
pub fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Minimal blocking HTTP GET.
pub trait HttpClient: Send + Sync {
    fn get(&self, url: &str) -> Result<FetchedPage, TransportError>;
}

pub struct UreqClient {
    agent: ureq::Agent,
}

impl UreqClient {
    pub fn new() -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .user_agent(USER_AGENT)
            .timeout_global(Some(Duration::from_secs(60)))
            .build()
            .into();
        UreqClient { agent }
    }
}

impl Default for UreqClient {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpClient for UreqClient {
    fn get(&self, url: &str) -> Result<FetchedPage, TransportError> {
        use ureq::ResponseExt;

        let net = |e: ureq::Error| TransportError::Network {
            url: url.to_owned(),
            reason: e.to_string(),
        };
        let mut resp = self.agent.get(url).call().map_err(net)?;
        let final_url = resp.get_uri().to_string();
        let status = resp.status().as_u16();
        let content_type = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_owned();
        let body = resp
            .body_mut()
            .with_config()
            .limit(20 * 1024 * 1024)
            .read_to_vec()
            .map_err(net)?;
        Ok(FetchedPage {
            final_url,
            status,
            body,
            content_type,
        })
    }
}

/// Enforces a minimum interval between consecutive calls.
#[derive(Debug)]
pub struct Pacer {
    interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl Pacer {
    pub fn new(interval: Duration) -> Self {
        Pacer {
            interval,
            last: Mutex::new(None),
        }
    }

    pub fn wait(&self) {
        let mut last = self.last.lock().expect("pacer lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.interval {
                std::thread::sleep(self.interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

/// Live DOC API search, one request at a time, at least one second apart.
pub struct LiveSearch<C: HttpClient> {
    client: C,
    pacer: Pacer,
}

impl<C: HttpClient> LiveSearch<C> {
    pub fn new(client: C) -> Self {
        Self::with_interval(client, Duration::from_secs(1))
    }

    pub fn with_interval(client: C, interval: Duration) -> Self {
        LiveSearch {
            client,
            pacer: Pacer::new(interval),
        }
    }
}

impl<C: HttpClient> SearchTransport for LiveSearch<C> {
    fn is_live(&self) -> bool {
        true
    }

    fn artlist(&self, _taxon: &str, query: &Query) -> Result<Vec<u8>, TransportError> {
        self.pacer.wait();
        let url = query.request_url();
        debug!("GET {url}");
        let page = self.client.get(&url)?;
        if !(200..300).contains(&page.status) {
            return Err(TransportError::Network {
                url,
                reason: format!("HTTP status {}", page.status),
            });
        }
        Ok(page.body)
    }
}

/// Replays ArtList documents from `<root>/<taxon>/<keyword>/<start>-<end>.json`.
#[derive(Debug, Clone)]
pub struct FixtureSearch {
    root: PathBuf,
}

impl FixtureSearch {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixtureSearch { root: root.into() }
    }

    pub fn path_for(
        &self,
        taxon: &str,
        keyword: &str,
        window: &crate::domain::TimeWindow,
    ) -> PathBuf {
        self.root
            .join(taxon)
            .join(keyword)
            .join(format!("{window}.json"))
    }
}

impl SearchTransport for FixtureSearch {
    fn is_live(&self) -> bool {
        false
    }

    fn artlist(&self, taxon: &str, query: &Query) -> Result<Vec<u8>, TransportError> {
        read_fixture(&self.path_for(taxon, &query.keyword, &query.window))
    }
}

fn read_fixture(path: &Path) -> Result<Vec<u8>, TransportError> {
    fs::read(path).map_err(|source| match source.kind() {
        io::ErrorKind::NotFound => TransportError::MissingFixture {
            path: path.to_owned(),
        },
        _ => TransportError::FixtureIo {
            path: path.to_owned(),
            source,
        },
    })
}

/// Optional per-page metadata stored next to a page fixture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PageMeta {
    #[serde(default = "default_status")]
    pub status: u16,
    #[serde(default = "default_content_type")]
    pub content_type: String,
}

fn default_status() -> u16 {
    200
}

fn default_content_type() -> String {
    "text/html; charset=utf-8".into()
}

impl Default for PageMeta {
    fn default() -> Self {
        PageMeta {
            status: default_status(),
            content_type: default_content_type(),
        }
    }
}

/// Replays pages keyed by the SHA-256 of their normalized URL:
/// `<root>/<hash>.html` holds the body and an optional `<root>/<hash>.json`
/// holds a [`PageMeta`]. A missing body is treated as empty when metadata
/// exists (useful for error statuses).
#[derive(Debug, Clone)]
pub struct FixturePages {
    root: PathBuf,
}

impl FixturePages {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixturePages { root: root.into() }
    }

    pub fn key_for(url: &str) -> Option<String> {
        normalize_url(url).map(|n| sha256_hex(&n))
    }

    /// Writes a page fixture for `url`.
    pub fn store(&self, url: &str, body: &[u8], meta: Option<&PageMeta>) -> io::Result<()> {
        let key = Self::key_for(url)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "invalid url"))?;
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join(format!("{key}.html")), body)?;
        if let Some(meta) = meta {
            fs::write(
                self.root.join(format!("{key}.json")),
                serde_json::to_vec(meta).expect("meta serializes"),
            )?;
        }
        Ok(())
    }
}

impl PageTransport for FixturePages {
    fn is_live(&self) -> bool {
        false
    }

    fn get(&self, url: &str) -> Result<FetchedPage, TransportError> {
        let key = Self::key_for(url).ok_or_else(|| TransportError::InvalidUrl(url.to_owned()))?;
        let body_path = self.root.join(format!("{key}.html"));
        let meta_path = self.root.join(format!("{key}.json"));
        let meta = match read_fixture(&meta_path) {
            Ok(bytes) => Some(serde_json::from_slice::<PageMeta>(&bytes).map_err(|e| {
                TransportError::FixtureIo {
                    path: meta_path.clone(),
                    source: io::Error::new(io::ErrorKind::InvalidData, e),
                }
            })?),
            Err(TransportError::MissingFixture { .. }) => None,
            Err(e) => return Err(e),
        };
        let body = match (read_fixture(&body_path), &meta) {
            (Ok(b), _) => b,
            (Err(TransportError::MissingFixture { .. }), Some(_)) => Vec::new(),
            (Err(e), _) => return Err(e),
        };
        let meta = meta.unwrap_or_default();
        Ok(FetchedPage {
            final_url: url.to_owned(),
            status: meta.status,
            body,
            content_type: meta.content_type,
        })
    }
}

/// Live page retrieval through an on-disk cache of successful responses.
pub struct LivePages<C: HttpClient> {
    client: C,
    cache_dir: Option<PathBuf>,
}

impl<C: HttpClient> LivePages<C> {
    pub fn new(client: C, cache_dir: Option<PathBuf>) -> Self {
        LivePages { client, cache_dir }
    }

    /// Cache directory from `FAUNAWATCH_CACHE`, falling back to `default`.
    pub fn cache_dir_from_env(default: Option<PathBuf>) -> Option<PathBuf> {
        std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .or(default)
    }
}

#[derive(Serialize, Deserialize)]
struct CachedMeta {
    final_url: String,
    status: u16,
    content_type: String,
}

impl<C: HttpClient> PageTransport for LivePages<C> {
    fn is_live(&self) -> bool {
        true
    }

    fn get(&self, url: &str) -> Result<FetchedPage, TransportError> {
        let key = sha256_hex(url);
        if let Some(dir) = &self.cache_dir {
            let meta = fs::read(dir.join(format!("{key}.meta.json")))
                .ok()
                .and_then(|b| serde_json::from_slice::<CachedMeta>(&b).ok());
            if let (Some(meta), Ok(body)) = (meta, fs::read(dir.join(format!("{key}.body")))) {
                debug!("cache hit {url}");
                return Ok(FetchedPage {
                    final_url: meta.final_url,
                    status: meta.status,
                    body,
                    content_type: meta.content_type,
                });
            }
        }
        debug!("GET {url}");
        let page = self.client.get(url)?;
        if let (Some(dir), true) = (&self.cache_dir, (200..300).contains(&page.status)) {
            let meta = CachedMeta {
                final_url: page.final_url.clone(),
                status: page.status,
                content_type: page.content_type.clone(),
            };
            // Cache failures only cost a refetch.
            let _ = fs::create_dir_all(dir)
                .and_then(|_| fs::write(dir.join(format!("{key}.body")), &page.body))
                .and_then(|_| {
                    fs::write(
                        dir.join(format!("{key}.meta.json")),
                        serde_json::to_vec(&meta).expect("meta serializes"),
                    )
                });
        }
        Ok(page)
    }
}

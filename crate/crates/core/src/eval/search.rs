//! Search result pages, URL normalization, Recall@10 and search clients.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, to_line, Keyed};
use crate::error::{Error, Result};
use crate::http::{with_retries, JsonClient};

pub const PAGE_SIZE: usize = 10;

/// Environment variable holding the live search API key.
pub const SEARCH_KEY_ENV: &str = "Q2D_SEARCH_API_KEY";
pub const DEFAULT_SEARCH_ENDPOINT: &str = "https://serpapi.com/search.json";

/// Lowercases the host and drops the scheme, fragment and trailing slashes.
/// Path and query keep their case.
pub fn normalize_url(url: &str) -> String {
    let url = url.trim();
    let rest = match url.find("://") {
        Some(i) if url[..i].chars().all(|c| c.is_ascii_alphanumeric() || "+-.".contains(c)) => &url[i + 3..],
        _ => url,
    };
    let rest = rest.split('#').next().unwrap_or("");
    let host_end = rest.find(['/', '?']).unwrap_or(rest.len());
    let mut out = rest[..host_end].to_ascii_lowercase();
    out.push_str(&rest[host_end..]);
    while out.ends_with('/') {
        out.pop();
    }
    out
}

/// Top results for a query: normalized, deduplicated, at most ten.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResultPage {
    pub query: String,
    pub urls: Vec<String>,
}

impl SearchResultPage {
    pub fn new<S: AsRef<str>>(query: impl Into<String>, urls: impl IntoIterator<Item = S>) -> Self {
        let mut seen = Vec::with_capacity(PAGE_SIZE);
        for u in urls {
            let n = normalize_url(u.as_ref());
            if n.is_empty() || seen.contains(&n) {
                continue;
            }
            seen.push(n);
            if seen.len() == PAGE_SIZE {
                break;
            }
        }
        SearchResultPage {
            query: query.into(),
            urls: seen,
        }
    }
}

impl Keyed for SearchResultPage {
    fn key(&self) -> Option<&str> {
        Some(&self.query)
    }
}

/// `|gold ∩ pred| / |gold|`; `None` when the gold page is empty.
pub fn recall_at_10(gold: &SearchResultPage, pred: &SearchResultPage) -> Option<f64> {
    let gold = SearchResultPage::new("", &gold.urls);
    if gold.urls.is_empty() {
        return None;
    }
    let pred = SearchResultPage::new("", &pred.urls);
    let hits = gold.urls.iter().filter(|u| pred.urls.contains(u)).count();
    Some(hits as f64 / gold.urls.len() as f64)
}

pub trait SearchClient: Send + Sync {
    fn fetch(&self, query: &str) -> Result<SearchResultPage>;
}

/// Serves pages recorded in a `{"query":..,"urls":[..]}` JSON-lines file.
#[derive(Debug, Default)]
pub struct FixtureSearch {
    pages: HashMap<String, SearchResultPage>,
}

impl FixtureSearch {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut pages = HashMap::new();
        for r in read_jsonl::<SearchResultPage>(path)? {
            let (_, page) = r?;
            let page = SearchResultPage::new(page.query, page.urls);
            pages.insert(page.query.clone(), page);
        }
        Ok(FixtureSearch { pages })
    }

    pub fn from_pages(pages: impl IntoIterator<Item = SearchResultPage>) -> Self {
        FixtureSearch {
            pages: pages.into_iter().map(|p| (p.query.clone(), p)).collect(),
        }
    }
}

impl SearchClient for FixtureSearch {
    fn fetch(&self, query: &str) -> Result<SearchResultPage> {
        if query.trim().is_empty() {
            return Err(Error::Input("empty search query".into()));
        }
        self.pages.get(query).cloned().ok_or_else(|| Error::FixtureMiss {
            queries: vec![query.to_string()],
        })
    }
}

/// Live web search (SerpApi-compatible JSON), rate limited, optionally
/// appending every fetched page to a fixture file.
pub struct LiveSearch {
    endpoint: String,
    api_key: String,
    client: JsonClient,
    min_interval: Duration,
    last_request: Mutex<Option<Instant>>,
    record: Option<Mutex<PathBuf>>,
    retries: u32,
}

impl LiveSearch {
    pub fn new(endpoint: impl Into<String>, api_key: impl Into<String>, min_interval: Duration) -> Self {
        LiveSearch {
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            client: JsonClient::new(Duration::from_secs(30), None),
            min_interval,
            last_request: Mutex::new(None),
            record: None,
            retries: 2,
        }
    }

    /// Reads the API key from [`SEARCH_KEY_ENV`].
    pub fn from_env(endpoint: impl Into<String>, min_interval: Duration) -> Result<Self> {
        let key = std::env::var(SEARCH_KEY_ENV)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| Error::Config(format!("live search needs {SEARCH_KEY_ENV}")))?;
        Ok(Self::new(endpoint, key, min_interval))
    }

    pub fn recording_to(mut self, path: impl Into<PathBuf>) -> Self {
        self.record = Some(Mutex::new(path.into()));
        self
    }

    fn wait_turn(&self) {
        let mut last = self.last_request.lock().expect("rate limiter lock");
        if let Some(t) = *last {
            let elapsed = t.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

impl SearchClient for LiveSearch {
    fn fetch(&self, query: &str) -> Result<SearchResultPage> {
        if query.trim().is_empty() {
            return Err(Error::Input("empty search query".into()));
        }
        let num = PAGE_SIZE.to_string();
        let resp = with_retries(self.retries, || {
            self.wait_turn();
            self.client.get(
                &self.endpoint,
                &[
                    ("engine", "google"),
                    ("q", query),
                    ("num", &num),
                    ("api_key", &self.api_key),
                ],
            )
        })?;
        let links = resp
            .get("organic_results")
            .and_then(|v| v.as_array())
            .map(|rs| rs.iter().filter_map(|r| r.get("link")?.as_str()).collect::<Vec<_>>())
            .unwrap_or_default();
        let page = SearchResultPage::new(query, links);
        if let Some(rec) = &self.record {
            let path = rec.lock().expect("record lock");
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&*path)
                .map_err(|e| Error::io(&*path, e))?;
            f.write_all(to_line(&page).as_bytes())
                .map_err(|e| Error::io(&*path, e))?;
        }
        Ok(page)
    }
}

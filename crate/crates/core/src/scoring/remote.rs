use std::collections::HashMap;
use std::time::Duration;

use serde_json::{json, Value};

use super::cache::{CacheKind, ScoreCache};
use super::{check_nli_inputs, check_texts, Embedder, EmbeddingVector, NliScorer};
use crate::error::{Error, Result};
use crate::http::{field, join_url, with_retries, JsonClient};

/// Client for a scoring service exposing `POST /embed` and `POST /nli`.
///
/// With a cache attached, every response is appended to it and later lookups
/// never touch the network.
pub struct RemoteScorer {
    endpoint: String,
    client: JsonClient,
    cache: Option<ScoreCache>,
    retries: u32,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, cache: Option<ScoreCache>) -> Self {
        RemoteScorer {
            endpoint: endpoint.into(),
            client: JsonClient::new(timeout, None),
            cache,
            retries: 2,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn cache(&self) -> Option<&ScoreCache> {
        self.cache.as_ref()
    }

    fn fetch_vectors(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        let url = join_url(&self.endpoint, "embed");
        let body = json!({ "texts": texts });
        let resp = with_retries(self.retries, || self.client.post(&url, &body))?;
        let bad = |message: String| Error::Service {
            endpoint: url.clone(),
            status: 200,
            message,
        };
        let rows = field(&url, &resp, "vectors")?
            .as_array()
            .ok_or_else(|| bad("\"vectors\" is not an array".into()))?;
        if rows.len() != texts.len() {
            return Err(bad(format!("{} vectors for {} texts", rows.len(), texts.len())));
        }
        let dim = field(&url, &resp, "dim")?.as_u64().map(|d| d as usize);
        rows.iter()
            .map(|row| {
                let values = parse_vector(row).ok_or_else(|| bad("vector has non-numeric entries".into()))?;
                if dim.is_some_and(|d| d != values.len()) {
                    return Err(bad(format!("vector length {} disagrees with dim", values.len())));
                }
                EmbeddingVector::new(values).map_err(|e| bad(e.to_string()))
            })
            .collect()
    }
}

fn parse_vector(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(Value::as_f64).collect()
}

impl Embedder for RemoteScorer {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        check_texts(texts)?;
        let mut found: HashMap<&str, EmbeddingVector> = HashMap::new();
        let mut missing: Vec<&str> = Vec::new();
        for &t in texts {
            if found.contains_key(t) || missing.contains(&t) {
                continue;
            }
            let cached = self
                .cache
                .as_ref()
                .and_then(|c| c.get(&ScoreCache::embed_key(t)))
                .and_then(|v| parse_vector(&v))
                .and_then(|v| EmbeddingVector::new(v).ok());
            match cached {
                Some(v) => {
                    found.insert(t, v);
                }
                None => missing.push(t),
            }
        }
        if !missing.is_empty() {
            let vectors = self.fetch_vectors(&missing)?;
            for (t, v) in missing.into_iter().zip(vectors) {
                if let Some(c) = &self.cache {
                    c.insert(ScoreCache::embed_key(t), CacheKind::Embed, json!(v.values()))?;
                }
                found.insert(t, v);
            }
        }
        Ok(texts.iter().map(|t| found[t].clone()).collect())
    }
}

impl NliScorer for RemoteScorer {
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        check_nli_inputs(premise, hypothesis)?;
        let key = ScoreCache::nli_key(premise, hypothesis);
        if let Some(p) = self.cache.as_ref().and_then(|c| c.get(&key)).and_then(|v| v.as_f64()) {
            return Ok(p);
        }
        let url = join_url(&self.endpoint, "nli");
        let body = json!({ "premise": premise, "hypothesis": hypothesis });
        let resp = with_retries(self.retries, || self.client.post(&url, &body))?;
        let p = field(&url, &resp, "entailment")?
            .as_f64()
            .filter(|p| (0.0..=1.0).contains(p))
            .ok_or_else(|| Error::Service {
                endpoint: url.clone(),
                status: 200,
                message: "\"entailment\" is not a probability".into(),
            })?;
        if let Some(c) = &self.cache {
            c.insert(key, CacheKind::Nli, json!(p))?;
        }
        Ok(p)
    }
}

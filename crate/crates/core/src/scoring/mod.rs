//! Semantic scoring providers: sentence embeddings and NLI entailment.
//!
//! Two embedders exist. [`BuiltinEmbedder`] is an offline hashed
//! bag-of-words; [`RemoteScorer`] speaks the `/embed` + `/nli` HTTP contract
//! and can replay everything from a score cache. NLI is remote-only.

mod builtin;
mod cache;
mod remote;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builtin::{bucket_of, BuiltinEmbedder, BUILTIN_DIM};
pub use cache::{CacheKind, ScoreCache};
pub use remote::RemoteScorer;

/// Tolerance on the L2 norm of every embedding.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Accepts an already-normalized vector.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Input("embedding has dimension 0".into()));
        }
        let norm = l2(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Input(format!("embedding norm {norm} is not 1")));
        }
        Ok(EmbeddingVector { values })
    }

    /// Scales `raw` to unit length; `None` for a zero vector.
    pub fn normalized(mut raw: Vec<f64>) -> Option<Self> {
        let norm = l2(&raw);
        if raw.is_empty() || norm == 0.0 || !norm.is_finite() {
            return None;
        }
        raw.iter_mut().for_each(|v| *v /= norm);
        Some(EmbeddingVector { values: raw })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }
}

impl std::ops::Neg for &EmbeddingVector {
    type Output = EmbeddingVector;

    fn neg(self) -> EmbeddingVector {
        EmbeddingVector {
            values: self.values.iter().map(|v| -v).collect(),
        }
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity clamped to `[-1, 1]`. Identical vectors score exactly 1.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Input(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    if a.values == b.values {
        return Ok(1.0);
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok((dot / (a.norm() * b.norm())).clamp(-1.0, 1.0))
}

pub trait Embedder: Send + Sync {
    /// One unit vector per input, in input order.
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;

    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let v = self.embed(&[a, b])?;
        cosine(&v[0], &v[1])
    }
}

pub trait NliScorer: Send + Sync {
    /// Entailment probability of `hypothesis` given `premise`.
    fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64>;
}

pub(crate) fn check_texts(texts: &[&str]) -> Result<()> {
    if texts.is_empty() {
        return Err(Error::Input("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::Input(format!("text #{i} is empty")));
    }
    Ok(())
}

pub(crate) fn check_nli_inputs(premise: &str, hypothesis: &str) -> Result<()> {
    if premise.trim().is_empty() || hypothesis.trim().is_empty() {
        return Err(Error::Input("NLI premise and hypothesis must be non-empty".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    BuiltinHash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreProviderConfig {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_path: Option<PathBuf>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

impl Default for ScoreProviderConfig {
    fn default() -> Self {
        ScoreProviderConfig {
            kind: ProviderKind::BuiltinHash,
            endpoint: None,
            timeout_ms: default_timeout_ms(),
            cache_path: None,
        }
    }
}

impl ScoreProviderConfig {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        ScoreProviderConfig {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ProviderKind::Remote && self.endpoint.is_none() {
            return Err(Error::Config("remote scorer requires an endpoint".into()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<ScoringProviders> {
        self.validate()?;
        match self.kind {
            ProviderKind::BuiltinHash => Ok(ScoringProviders::builtin()),
            ProviderKind::Remote => {
                let cache = self.cache_path.as_ref().map(ScoreCache::open).transpose()?;
                let remote = Arc::new(RemoteScorer::new(
                    self.endpoint.clone().unwrap_or_default(),
                    Duration::from_millis(self.timeout_ms),
                    cache,
                ));
                Ok(ScoringProviders {
                    embedder: remote.clone(),
                    nli: Some(remote),
                })
            }
        }
    }
}

/// The embedder plus, when available, an NLI scorer.
#[derive(Clone)]
pub struct ScoringProviders {
    pub embedder: Arc<dyn Embedder>,
    pub nli: Option<Arc<dyn NliScorer>>,
}

impl ScoringProviders {
    pub fn builtin() -> Self {
        ScoringProviders {
            embedder: Arc::new(BuiltinEmbedder),
            nli: None,
        }
    }

    pub fn nli(&self) -> Result<&dyn NliScorer> {
        self.nli
            .as_deref()
            .ok_or_else(|| Error::Unsupported("no NLI provider configured (the builtin scorer has none)".into()))
    }

    pub fn nli_score(&self, premise: &str, hypothesis: &str) -> Result<f64> {
        self.nli()?.nli_score(premise, hypothesis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(xs: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(xs.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let v = unit(&[0.3, -0.2, 0.9]);
        assert_eq!(cosine(&v, &v).unwrap(), 1.0);
        assert_eq!(cosine(&unit(&[1.0, 0.0]), &unit(&[0.0, 1.0])).unwrap(), 0.0);
        assert!((cosine(&v, &-&v).unwrap() + 1.0).abs() < 1e-12);
        assert!(matches!(cosine(&v, &unit(&[1.0])), Err(Error::Input(_))));
    }

    #[test]
    fn cosine_never_leaves_unit_interval() {
        let a = unit(&[1.0, 1e-9]);
        let b = unit(&[1.0, 2e-9]);
        let c = cosine(&a, &b).unwrap();
        assert!(c <= 1.0 && c > 0.999_999);
    }

    #[test]
    fn vector_constructor_checks_norm() {
        assert!(EmbeddingVector::new(vec![0.6, 0.8]).is_ok());
        assert!(EmbeddingVector::new(vec![0.6, 0.9]).is_err());
        assert!(EmbeddingVector::new(vec![]).is_err());
        assert!(EmbeddingVector::normalized(vec![0.0, 0.0]).is_none());
    }

    #[test]
    fn remote_requires_endpoint() {
        let cfg = ScoreProviderConfig {
            kind: ProviderKind::Remote,
            ..Default::default()
        };
        assert!(matches!(cfg.build(), Err(Error::Config(_))));
    }

    #[test]
    fn builtin_has_no_nli() {
        let p = ScoringProviders::builtin();
        assert!(matches!(p.nli_score("a", "b"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn empty_inputs_rejected() {
        let e = BuiltinEmbedder;
        assert!(matches!(e.embed(&[]), Err(Error::Input(_))));
        assert!(matches!(e.embed(&["ok", "  "]), Err(Error::Input(_))));
    }
}

//! Text to vector conversion.
//!
//! [`HashingEncoder`] is a dependency-free deterministic encoder for tests
//! and offline runs; [`RemoteEncoder`] talks to a sentence-encoder service.
//! Either can be wrapped in an [`EmbeddingCache`] which memoizes by content
//! hash and can be persisted next to transcripts.

mod cache;
mod hashing;
mod remote;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cache::{content_key, CacheError, CachedEmbedder, EmbeddingCache};
pub use hashing::HashingEncoder;
pub use remote::RemoteEncoder;

pub const DEFAULT_REMOTE_DIMENSION: usize = 512;

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbedError> {
        if values.is_empty() {
            return Err(EmbedError::DimensionMismatch {
                expected: 1,
                found: 0,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self, EmbedError> {
        Self::new(self.values.iter().map(|v| v * factor).collect())
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding contains a non-finite value")]
    NonFinite,
    #[error("text #{index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<EmbedError>,
    },
}

pub trait Embedder: Send + Sync {
    /// Identifier recorded alongside cached vectors.
    fn provider_id(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Element `i` of the result equals `embed(texts[i])`.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                self.embed(t).map_err(|e| EmbedError::AtIndex {
                    index,
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }

    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        (**self).embed(text)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        (**self).embed_batch(texts)
    }
}

pub(crate) fn require_text(text: &str) -> Result<(), EmbedError> {
    if text.trim().is_empty() {
        Err(EmbedError::EmptyText)
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum EmbedderKind {
    #[value(name = "local")]
    DeterministicLocal,
    #[value(name = "remote")]
    RemoteSentenceEncoder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub dimension: usize,
    pub endpoint: Option<String>,
    /// Overrides the provider id recorded in the cache file.
    pub provider_id: Option<String>,
    pub cache: bool,
}

impl EmbedderConfig {
    pub fn local(dimension: usize) -> Self {
        Self {
            kind: EmbedderKind::DeterministicLocal,
            dimension,
            endpoint: None,
            provider_id: None,
            cache: false,
        }
    }

    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: EmbedderKind::RemoteSentenceEncoder,
            dimension: DEFAULT_REMOTE_DIMENSION,
            endpoint: Some(endpoint.into()),
            provider_id: None,
            cache: true,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dimension < 2 {
            return Err(format!("embedding dimension must be at least 2, got {}", self.dimension));
        }
        if self.kind == EmbedderKind::RemoteSentenceEncoder && self.endpoint.is_none() {
            return Err("remote embedder needs an endpoint".into());
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, String> {
        self.validate()?;
        Ok(match self.kind {
            EmbedderKind::DeterministicLocal => Arc::new(HashingEncoder::new(self.dimension)),
            EmbedderKind::RemoteSentenceEncoder => {
                let mut encoder = RemoteEncoder::new(self.endpoint.clone().expect("validated"), self.dimension);
                if let Some(id) = &self.provider_id {
                    encoder = encoder.with_provider_id(id.clone());
                }
                Arc::new(encoder)
            }
        })
    }

    /// Builds the embedder, wrapped in a cache loaded from `cache_path`
    /// when caching is on.
    pub fn build_cached(&self, cache_path: &Path) -> Result<CachedEmbedder<Arc<dyn Embedder>>, String> {
        let inner = self.build()?;
        let cache = if self.cache && cache_path.exists() {
            EmbeddingCache::load(cache_path).map_err(|e| e.to_string())?
        } else {
            EmbeddingCache::new(inner.provider_id(), inner.dimension())
        };
        CachedEmbedder::with_cache(inner, cache).map_err(|e| e.to_string())
    }
}

/// Conventional cache location next to a transcript directory.
pub fn cache_path_for(transcripts: &Path) -> PathBuf {
    transcripts.join("embedding-cache.json")
}

#[cfg(test)]
mod tests;

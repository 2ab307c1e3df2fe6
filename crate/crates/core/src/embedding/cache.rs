use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{require_text, EmbedError, Embedder, EmbeddingVector};

const CACHE_VERSION: u32 = 1;

/// Hex SHA-256 of the raw text bytes.
pub fn content_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("i/o error on cache file: {0}")]
    Io(#[from] io::Error),
    #[error("cache file does not parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported cache version {0}")]
    Version(u32),
    #[error("cache belongs to {found_provider} (dimension {found_dimension}), expected {provider} (dimension {dimension})")]
    Mismatch {
        provider: String,
        dimension: usize,
        found_provider: String,
        found_dimension: usize,
    },
    #[error("cache entry {key} has dimension {found}, expected {expected}")]
    EntryDimension {
        key: String,
        expected: usize,
        found: usize,
    },
}

/// Persistent content-hash to vector map, tagged with the provider that
/// produced the vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCache {
    pub version: u32,
    pub provider_id: String,
    pub dimension: usize,
    pub entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingCache {
    pub fn new(provider_id: impl Into<String>, dimension: usize) -> Self {
        Self {
            version: CACHE_VERSION,
            provider_id: provider_id.into(),
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, text: &str, vector: EmbeddingVector) {
        self.entries.insert(content_key(text), vector);
    }

    pub fn load(path: &Path) -> Result<Self, CacheError> {
        let cache: EmbeddingCache = serde_json::from_slice(&fs::read(path)?)?;
        if cache.version != CACHE_VERSION {
            return Err(CacheError::Version(cache.version));
        }
        for (key, v) in &cache.entries {
            if v.dimension() != cache.dimension {
                return Err(CacheError::EntryDimension {
                    key: key.clone(),
                    expected: cache.dimension,
                    found: v.dimension(),
                });
            }
        }
        Ok(cache)
    }

    /// Writes through a temporary file so readers never see a partial cache.
    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        let tmp = path.with_extension("json.tmp");
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

type Cell = Arc<Mutex<Option<EmbeddingVector>>>;

/// Read-through memoizing wrapper. Each text is computed at most once per
/// cache; concurrent requests for the same text wait on the same cell.
pub struct CachedEmbedder<E> {
    inner: E,
    provider_id: String,
    dimension: usize,
    cells: Mutex<HashMap<String, Cell>>,
    provider_calls: AtomicU64,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        let cache = EmbeddingCache::new(inner.provider_id(), inner.dimension());
        Self::with_cache(inner, cache).expect("fresh cache matches its provider")
    }

    pub fn with_cache(inner: E, cache: EmbeddingCache) -> Result<Self, CacheError> {
        if cache.provider_id != inner.provider_id() || cache.dimension != inner.dimension() {
            return Err(CacheError::Mismatch {
                provider: inner.provider_id().to_owned(),
                dimension: inner.dimension(),
                found_provider: cache.provider_id,
                found_dimension: cache.dimension,
            });
        }
        let cells = cache
            .entries
            .into_iter()
            .map(|(k, v)| (k, Arc::new(Mutex::new(Some(v)))))
            .collect();
        Ok(Self {
            provider_id: inner.provider_id().to_owned(),
            dimension: inner.dimension(),
            inner,
            cells: Mutex::new(cells),
            provider_calls: AtomicU64::new(0),
        })
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    /// Number of calls forwarded to the wrapped provider.
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.snapshot().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> EmbeddingCache {
        let cells = self.cells.lock().expect("cache lock");
        let mut cache = EmbeddingCache::new(self.provider_id.clone(), self.dimension);
        for (key, cell) in cells.iter() {
            if let Some(v) = cell.lock().expect("cell lock").as_ref() {
                cache.entries.insert(key.clone(), v.clone());
            }
        }
        cache
    }

    pub fn save(&self, path: &Path) -> Result<(), CacheError> {
        self.snapshot().save(path)
    }

    fn cell(&self, key: &str) -> Cell {
        let mut cells = self.cells.lock().expect("cache lock");
        cells.entry(key.to_owned()).or_default().clone()
    }

    fn check(&self, v: EmbeddingVector) -> Result<EmbeddingVector, EmbedError> {
        if v.dimension() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                found: v.dimension(),
            });
        }
        Ok(v)
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        require_text(text)?;
        let cell = self.cell(&content_key(text));
        let mut slot = cell.lock().expect("cell lock");
        if let Some(v) = slot.as_ref() {
            return Ok(v.clone());
        }
        self.provider_calls.fetch_add(1, Ordering::SeqCst);
        let v = self.check(self.inner.embed(text)?)?;
        *slot = Some(v.clone());
        Ok(v)
    }

    /// Misses are deduplicated and sent to the provider in one batch call.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        for (index, t) in texts.iter().enumerate() {
            require_text(t).map_err(|e| EmbedError::AtIndex {
                index,
                source: Box::new(e),
            })?;
        }
        let keys: Vec<String> = texts.iter().map(|t| content_key(t)).collect();
        let mut missing: Vec<(usize, &str)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (i, key) in keys.iter().enumerate() {
            let cached = self.cell(key).lock().expect("cell lock").is_some();
            if !cached && seen.insert(key.as_str()) {
                missing.push((i, texts[i]));
            }
        }
        if !missing.is_empty() {
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            let batch: Vec<&str> = missing.iter().map(|(_, t)| *t).collect();
            let vectors = self.inner.embed_batch(&batch).map_err(|e| match e {
                EmbedError::AtIndex { index, source } => EmbedError::AtIndex {
                    index: missing[index].0,
                    source,
                },
                other => other,
            })?;
            for ((i, _), v) in missing.iter().zip(vectors) {
                let v = self.check(v).map_err(|e| EmbedError::AtIndex {
                    index: *i,
                    source: Box::new(e),
                })?;
                let cell = self.cell(&keys[*i]);
                let mut slot = cell.lock().expect("cell lock");
                if slot.is_none() {
                    *slot = Some(v);
                }
            }
        }
        keys.iter()
            .map(|k| {
                Ok(self
                    .cell(k)
                    .lock()
                    .expect("cell lock")
                    .clone()
                    .expect("filled above"))
            })
            .collect()
    }
}

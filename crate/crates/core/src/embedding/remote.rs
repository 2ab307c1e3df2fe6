use std::time::Duration;

use super::{require_text, EmbedError, Embedder, EmbeddingVector};

/// Client for an encoder service that accepts a JSON array of strings and
/// answers with a JSON array of float arrays in the same order.
#[derive(Debug, Clone)]
pub struct RemoteEncoder {
    endpoint: String,
    dimension: usize,
    provider_id: String,
    timeout: Duration,
}

impl RemoteEncoder {
    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            dimension,
            provider_id: format!("remote-sentence-encoder-{dimension}"),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_provider_id(mut self, id: impl Into<String>) -> Self {
        self.provider_id = id.into();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl Embedder for RemoteEncoder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        self.embed_batch(&[text]).map(|mut v| v.remove(0)).map_err(|e| match e {
            EmbedError::AtIndex { source, .. } => *source,
            other => other,
        })
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        for (index, t) in texts.iter().enumerate() {
            require_text(t).map_err(|e| EmbedError::AtIndex {
                index,
                source: Box::new(e),
            })?;
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        let rows: Vec<Vec<f64>> = agent
            .post(&self.endpoint)
            .send_json(texts)
            .map_err(|e| EmbedError::ProviderUnavailable(e.to_string()))?
            .into_json()
            .map_err(|e| EmbedError::ProviderUnavailable(format!("unreadable response: {e}")))?;
        if rows.len() != texts.len() {
            return Err(EmbedError::ProviderUnavailable(format!(
                "asked for {} vectors, received {}",
                texts.len(),
                rows.len()
            )));
        }
        rows.into_iter()
            .enumerate()
            .map(|(index, row)| {
                let at = |source| EmbedError::AtIndex {
                    index,
                    source: Box::new(source),
                };
                if row.len() != self.dimension {
                    return Err(at(EmbedError::DimensionMismatch {
                        expected: self.dimension,
                        found: row.len(),
                    }));
                }
                EmbeddingVector::new(row).map_err(at)
            })
            .collect()
    }
}

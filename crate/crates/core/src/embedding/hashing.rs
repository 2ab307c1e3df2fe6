use sha2::{Digest, Sha256};

use super::{require_text, EmbedError, Embedder, EmbeddingVector};

/// Feature-hashing bag-of-words encoder.
///
/// Lower-cases the text, splits on whitespace, adds 1 to the bucket
/// `sha256(token)[..8] mod dimension` for every token and L2-normalizes.
/// Texts whose tokens land in disjoint buckets are exactly orthogonal.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dimension: usize,
    provider_id: String,
}

impl HashingEncoder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 2, "dimension must be at least 2");
        Self {
            dimension,
            provider_id: format!("hashing-v1-{dimension}"),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let digest = Sha256::digest(token.as_bytes());
        let word = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
        (word % self.dimension as u64) as usize
    }
}

impl Embedder for HashingEncoder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        require_text(text)?;
        let mut counts = vec![0.0_f64; self.dimension];
        for token in text.to_lowercase().split_whitespace() {
            counts[self.bucket(token)] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        for c in &mut counts {
            *c /= norm;
        }
        EmbeddingVector::new(counts)
    }
}

use super::AnalyticsError;
use crate::embedding::EmbeddingVector;

fn same_dimension(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<(), AnalyticsError> {
    if a.dimension() == b.dimension() {
        Ok(())
    } else {
        Err(AnalyticsError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        })
    }
}

/// Sum of element-wise products.
pub fn dot(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, AnalyticsError> {
    same_dimension(a, b)?;
    Ok(a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum())
}

/// Euclidean length.
pub fn norm(a: &EmbeddingVector) -> f64 {
    a.values().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine value plus whether it had to be pulled back into [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cosine {
    pub value: f64,
    pub clamped: bool,
}

/// Dot product over the product of norms, clamped to [-1, 1]. Fails on a
/// zero vector.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<Cosine, AnalyticsError> {
    let numerator = dot(a, b)?;
    let (norm_a, norm_b) = (norm(a), norm(b));
    if norm_a == 0.0 || norm_b == 0.0 {
        return Err(AnalyticsError::ZeroVector);
    }
    let raw = numerator / (norm_a * norm_b);
    let value = raw.clamp(-1.0, 1.0);
    Ok(Cosine {
        value,
        clamped: value != raw,
    })
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, AnalyticsError> {
    cosine(a, b).map(|c| c.value)
}

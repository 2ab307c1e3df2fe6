//! Similarity analytics over finished sessions.
//!
//! The unit of measurement is the *occasion*: one participant's initial
//! opinion compared against the proposal their session finally accepted.
//! Everything here is a pure function of sessions and an [`Embedder`].
//!
//! [`Embedder`]: crate::embedding::Embedder

mod aggregate;
mod alignment;
pub mod export;
mod iteration;
mod vector;

use serde::{Deserialize, Serialize};

use crate::domain::{ParticipantId, SdgTag, SessionId};
use crate::embedding::EmbedError;

pub use aggregate::{aggregate, aggregate_nested, AggregateReport, AggregateReportRow, NestedReport};
pub use alignment::{initial_final_alignment, iteration_records, per_iteration_alignment};
pub use iteration::{
    cases_per_iteration, curve_from_records, detect_elbow, second_differences, CasesHistogram,
    IterationCurvePoint, DEFAULT_ELBOW_THRESHOLD,
};
pub use vector::{cosine, cosine_similarity, dot, norm, Cosine};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for a zero vector")]
    ZeroVector,
    #[error("session {0} did not reach consensus")]
    NoConsensus(SessionId),
    #[error("session {0} has no proposal")]
    NoProposal(SessionId),
    #[error(transparent)]
    Embedding(#[from] EmbedError),
}

/// One cosine value between a participant's initial opinion and a proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub session_id: SessionId,
    pub participant_id: ParticipantId,
    pub llm_provider_id: String,
    pub sdg_tag: SdgTag,
    pub iteration_index: u32,
    pub value: f64,
    /// Whether the proposal compared against is the one the session accepted.
    pub accepted: bool,
    /// Whether the raw ratio fell outside [-1, 1] and was clamped.
    #[serde(default)]
    pub clamped: bool,
}

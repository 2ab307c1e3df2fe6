use super::{cosine, curve_from_records, AnalyticsError, IterationCurvePoint, SimilarityRecord};
use crate::domain::Session;
use crate::embedding::{Embedder, EmbeddingVector};

struct Embedded {
    opinions: Vec<EmbeddingVector>,
    proposals: Vec<EmbeddingVector>,
}

fn embed_session(session: &Session, embedder: &dyn Embedder) -> Result<Embedded, AnalyticsError> {
    let mut texts: Vec<&str> = session.opinions.iter().map(|o| o.text.as_str()).collect();
    texts.extend(session.iterations.iter().map(|it| it.proposal.text.as_str()));
    let mut vectors = embedder.embed_batch(&texts)?;
    let proposals = vectors.split_off(session.opinions.len());
    Ok(Embedded {
        opinions: vectors,
        proposals,
    })
}

fn record(session: &Session, opinion_idx: usize, iteration_idx: usize, e: &Embedded) -> Result<SimilarityRecord, AnalyticsError> {
    let c = cosine(&e.opinions[opinion_idx], &e.proposals[iteration_idx])?;
    let iteration = &session.iterations[iteration_idx];
    Ok(SimilarityRecord {
        session_id: session.id.clone(),
        participant_id: session.opinions[opinion_idx].participant_id.clone(),
        llm_provider_id: session.llm_provider_id.clone(),
        sdg_tag: session.question.sdg_tag,
        iteration_index: iteration.index(),
        value: c.value,
        accepted: session.consensus_iteration() == Some(iteration.index()),
        clamped: c.clamped,
    })
}

/// One record per participant: initial opinion against the accepted
/// proposal.
pub fn initial_final_alignment(session: &Session, embedder: &dyn Embedder) -> Result<Vec<SimilarityRecord>, AnalyticsError> {
    if session.consensus_iteration().is_none() {
        return Err(AnalyticsError::NoConsensus(session.id.clone()));
    }
    let e = embed_session(session, embedder)?;
    let last = session.iterations.len() - 1;
    (0..session.opinions.len())
        .map(|i| record(session, i, last, &e))
        .collect()
}

/// One record per (iteration, participant): initial opinion against every
/// proposal the session produced, accepted or not.
pub fn iteration_records(session: &Session, embedder: &dyn Embedder) -> Result<Vec<SimilarityRecord>, AnalyticsError> {
    if session.iterations.is_empty() {
        return Err(AnalyticsError::NoProposal(session.id.clone()));
    }
    let e = embed_session(session, embedder)?;
    let mut out = Vec::with_capacity(session.iterations.len() * session.opinions.len());
    for k in 0..session.iterations.len() {
        for i in 0..session.opinions.len() {
            out.push(record(session, i, k, &e)?);
        }
    }
    Ok(out)
}

/// Mean similarity to the initial opinions for each proposal of one session.
pub fn per_iteration_alignment(session: &Session, embedder: &dyn Embedder) -> Result<Vec<IterationCurvePoint>, AnalyticsError> {
    Ok(curve_from_records(&iteration_records(session, embedder)?))
}

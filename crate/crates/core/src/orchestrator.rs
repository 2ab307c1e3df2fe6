//! Turns engine directives into model calls and events.
//!
//! [`advance`] runs until the session needs human input or is finished.
//! Every model call is preceded by [`EventSink::note_intent`] with the
//! directive's idempotency key, and the resulting event carries the same
//! key. Re-running `advance` after an interruption re-derives the same
//! directive from the persisted log, so a call is applied at most once.

use tracing::{debug, warn};

use crate::domain::{
    DomainError, EndReason, EventBody, Phase, Session, SessionEvent, StrategySelected,
};
use crate::engine::{step, DirectiveKind, FALLBACK_STRATEGY, STRATEGY_SELECTION_ATTEMPTS};
use crate::llm::{parse_strategy, Gateway, GatewayError, GenerationRequest};

#[derive(Debug, thiserror::Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("persistence failed: {0}")]
    Sink(String),
}

/// Where the orchestrator reads state from and records events to.
pub trait EventSink {
    fn session(&self) -> &Session;

    /// Validates, persists and applies one event.
    fn append(&mut self, body: EventBody) -> Result<SessionEvent, OrchestratorError>;

    /// Called before a model call, with its idempotency key.
    fn note_intent(&mut self, _key: &str) -> Result<(), OrchestratorError> {
        Ok(())
    }
}

/// Drives the session forward; returns the events appended.
pub fn advance(sink: &mut dyn EventSink, gateway: &Gateway) -> Result<Vec<SessionEvent>, OrchestratorError> {
    let mut appended = Vec::new();
    loop {
        let session = sink.session();
        let directive = step(session);
        let key = directive.idempotency_key(&session.id);
        let provider = session.llm_provider_id.clone();
        debug!(session = %session.id, kind = %directive.kind, "directive");

        let body = match directive.kind {
            DirectiveKind::WaitForHumans => return Ok(appended),
            DirectiveKind::AnnounceConsensus => {
                if session.consensus_announced {
                    return Ok(appended);
                }
                EventBody::consensus(directive.iteration_index)
            }
            DirectiveKind::AnnounceNoConsensus => {
                if session.phase != Phase::SelectingStrategy {
                    return Ok(appended);
                }
                EventBody::ended(EndReason::IterationCap, session.iteration_count())
            }
            DirectiveKind::RequestInitialProposal | DirectiveKind::RequestRevisedProposal => {
                let key = key.expect("model directive has a key");
                let request = match directive.strategy {
                    Some(s) => GenerationRequest::revise(directive.context, s, provider),
                    None => GenerationRequest::synthesize(directive.context, provider),
                };
                sink.note_intent(&key)?;
                let response = gateway.generate(&request)?;
                EventBody::proposal(directive.iteration_index, response.text.trim(), directive.strategy, key)
            }
            DirectiveKind::RequestStrategySelection => {
                let key = key.expect("model directive has a key");
                let request = GenerationRequest::select_strategy(directive.context, provider);
                sink.note_intent(&key)?;
                let mut raw_response = String::new();
                let mut chosen = None;
                for attempt in 1..=STRATEGY_SELECTION_ATTEMPTS {
                    raw_response = gateway.generate(&request)?.text;
                    match parse_strategy(&raw_response) {
                        Ok(s) => {
                            chosen = Some(s);
                            break;
                        }
                        Err(e) => warn!(attempt, error = %e, "strategy selection unparseable"),
                    }
                }
                EventBody::StrategySelected(StrategySelected {
                    iteration_index: directive.iteration_index,
                    strategy: chosen.unwrap_or(FALLBACK_STRATEGY),
                    raw_response,
                    fallback: chosen.is_none(),
                    directive_key: key,
                })
            }
        };
        appended.push(sink.append(body)?);
    }
}

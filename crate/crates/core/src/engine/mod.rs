//! The facilitation loop as a pure decision function.
//!
//! [`step`] looks at a session snapshot and says what has to happen next:
//! wait for people, ask the model for something, or announce the outcome.
//! It never performs the action itself.

mod history;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::{ParticipantId, Phase, Session, SessionId, Strategy, Verdict};

pub use history::{ConversationHistory, HistoryItem};

/// Strategy used when the model's selection cannot be parsed twice in a row.
pub const FALLBACK_STRATEGY: Strategy = Strategy::SummarizeDiscussion;

/// Selection calls made before falling back.
pub const STRATEGY_SELECTION_ATTEMPTS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DirectiveKind {
    RequestInitialProposal,
    RequestStrategySelection,
    RequestRevisedProposal,
    AnnounceConsensus,
    AnnounceNoConsensus,
    WaitForHumans,
}

impl DirectiveKind {
    pub fn needs_model(self) -> bool {
        matches!(
            self,
            DirectiveKind::RequestInitialProposal
                | DirectiveKind::RequestStrategySelection
                | DirectiveKind::RequestRevisedProposal
        )
    }
}

impl fmt::Display for DirectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineDirective {
    pub kind: DirectiveKind,
    /// Iteration the directive concerns: the proposal to be issued for
    /// proposal requests, the rejected one for strategy selection.
    pub iteration_index: u32,
    /// Set only for `RequestRevisedProposal`.
    pub strategy: Option<Strategy>,
    /// Participants whose input is awaited, for `WaitForHumans`.
    pub awaiting: Vec<ParticipantId>,
    pub context: ConversationHistory,
}

impl EngineDirective {
    /// Stable key identifying the model call behind this directive.
    /// `None` for directives that do not call the model.
    pub fn idempotency_key(&self, session: &SessionId) -> Option<String> {
        let tag = match self.kind {
            DirectiveKind::RequestInitialProposal => "propose",
            DirectiveKind::RequestStrategySelection => "select",
            DirectiveKind::RequestRevisedProposal => "propose",
            _ => return None,
        };
        Some(format!("{session}/{tag}/{}", self.iteration_index))
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("duplicate verdict from {0}")]
    DuplicateVerdict(ParticipantId),
}

/// True iff every one of `n_participants` voices is present and accepts.
pub fn accept_consensus_check(verdicts: &[Verdict], n_participants: usize) -> Result<bool, EngineError> {
    let mut seen = HashSet::new();
    for v in verdicts {
        if !seen.insert(&v.participant_id) {
            return Err(EngineError::DuplicateVerdict(v.participant_id.clone()));
        }
    }
    Ok(verdicts.len() == n_participants && verdicts.iter().all(|v| v.accept))
}

/// Decides the next action for a session. Total on every reachable state.
pub fn step(session: &Session) -> EngineDirective {
    let directive = |kind, iteration_index, strategy, awaiting| EngineDirective {
        kind,
        iteration_index,
        strategy,
        awaiting,
        context: ConversationHistory::from_session(session),
    };
    let count = session.iteration_count();

    match session.phase {
        Phase::CollectingOpinions => {
            let awaiting = session
                .participants
                .iter()
                .filter(|p| session.opinion_of(&p.id).is_none())
                .map(|p| p.id.clone())
                .collect();
            directive(DirectiveKind::WaitForHumans, count, None, awaiting)
        }
        Phase::Synthesizing => directive(DirectiveKind::RequestInitialProposal, 1, None, vec![]),
        Phase::AwaitingVerdicts => {
            let it = session.current_iteration().expect("a proposal is awaiting verdicts");
            let awaiting = session
                .participants
                .iter()
                .filter(|p| it.verdict_of(&p.id).is_none())
                .map(|p| p.id.clone())
                .collect();
            directive(DirectiveKind::WaitForHumans, count, None, awaiting)
        }
        Phase::CollectingFeedback => {
            let it = session.current_iteration().expect("feedback follows a proposal");
            let awaiting = it
                .rejectors()
                .filter(|id| it.feedback_of(id).is_none())
                .cloned()
                .collect();
            directive(DirectiveKind::WaitForHumans, count, None, awaiting)
        }
        Phase::SelectingStrategy => {
            if count >= session.max_iterations {
                directive(DirectiveKind::AnnounceNoConsensus, count, None, vec![])
            } else if let Some(strategy) = session.pending_strategy {
                directive(DirectiveKind::RequestRevisedProposal, count + 1, Some(strategy), vec![])
            } else {
                directive(DirectiveKind::RequestStrategySelection, count, None, vec![])
            }
        }
        Phase::ConsensusReached => directive(DirectiveKind::AnnounceConsensus, count, None, vec![]),
        Phase::EndedNoConsensus => directive(DirectiveKind::AnnounceNoConsensus, count, None, vec![]),
    }
}

/// What a single participant is expected to do right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PendingAction {
    EnterOpinion,
    Vote,
    GiveFeedback,
    Wait,
    Done,
}

pub fn pending_action(session: &Session, participant: &ParticipantId) -> PendingAction {
    if session.is_terminal() {
        return PendingAction::Done;
    }
    let current = session.current_iteration();
    match session.phase {
        Phase::CollectingOpinions if session.opinion_of(participant).is_none() => {
            PendingAction::EnterOpinion
        }
        Phase::AwaitingVerdicts if current.is_some_and(|it| it.verdict_of(participant).is_none()) => {
            PendingAction::Vote
        }
        Phase::CollectingFeedback
            if current.is_some_and(|it| {
                it.verdict_of(participant).is_some_and(|v| !v.accept)
                    && it.feedback_of(participant).is_none()
            }) =>
        {
            PendingAction::GiveFeedback
        }
        _ => PendingAction::Wait,
    }
}

#[cfg(test)]
mod tests;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    DomainError, EndReason, Feedback, IterationRecord, Opinion, Participant, ParticipantId, Phase,
    Proposal, Question, Session, SessionId, Strategy, Verdict, SCHEMA_VERSION,
};

/// One entry of a session's append-only log.
///
/// Serialized as a single JSON object:
/// `{"sequence_no":1,"timestamp":"...","kind":"SessionCreated","payload":{...}}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub sequence_no: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

impl SessionEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    SessionCreated(SessionCreated),
    ParticipantJoined(Participant),
    OpinionPosted(OpinionPosted),
    ProposalIssued(ProposalIssued),
    VerdictPosted(Verdict),
    FeedbackPosted(Feedback),
    StrategySelected(StrategySelected),
    ConsensusReached(ConsensusAnnounced),
    SessionEnded(SessionEnded),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::SessionCreated(_) => EventKind::SessionCreated,
            EventBody::ParticipantJoined(_) => EventKind::ParticipantJoined,
            EventBody::OpinionPosted(_) => EventKind::OpinionPosted,
            EventBody::ProposalIssued(_) => EventKind::ProposalIssued,
            EventBody::VerdictPosted(_) => EventKind::VerdictPosted,
            EventBody::FeedbackPosted(_) => EventKind::FeedbackPosted,
            EventBody::StrategySelected(_) => EventKind::StrategySelected,
            EventBody::ConsensusReached(_) => EventKind::ConsensusReached,
            EventBody::SessionEnded(_) => EventKind::SessionEnded,
        }
    }

    /// Idempotency key of the facilitator call that produced this event.
    pub fn directive_key(&self) -> Option<&str> {
        match self {
            EventBody::ProposalIssued(p) => Some(&p.directive_key),
            EventBody::StrategySelected(s) => Some(&s.directive_key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    SessionCreated,
    ParticipantJoined,
    OpinionPosted,
    ProposalIssued,
    VerdictPosted,
    FeedbackPosted,
    StrategySelected,
    ConsensusReached,
    SessionEnded,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: SessionId,
    pub question: Question,
    pub llm_provider_id: String,
    pub max_iterations: u32,
    pub expected_participants: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpinionPosted {
    pub participant_id: ParticipantId,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalIssued {
    pub iteration_index: u32,
    pub text: String,
    pub strategy_used: Option<Strategy>,
    pub directive_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySelected {
    /// Iteration whose rejection prompted the selection.
    pub iteration_index: u32,
    pub strategy: Strategy,
    /// Model output the strategy was parsed from (last attempt).
    pub raw_response: String,
    /// True when no attempt parsed and the fallback strategy was used.
    pub fallback: bool,
    pub directive_key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsensusAnnounced {
    pub iteration_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEnded {
    pub reason: EndReason,
    pub iteration_count: u32,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("event log is empty or does not start with SessionCreated")]
    MissingCreationEvent,
    #[error("event {sequence_no}: {error}")]
    Event {
        sequence_no: u64,
        #[source]
        error: DomainError,
    },
}

impl ReplayError {
    pub fn sequence_no(&self) -> Option<u64> {
        match self {
            ReplayError::MissingCreationEvent => None,
            ReplayError::Event { sequence_no, .. } => Some(*sequence_no),
        }
    }
}

/// Folds one event into `state`, returning the new state.
///
/// `state` is `None` only for the first event, which must be
/// `SessionCreated` with `sequence_no` 1.
pub fn apply_event(state: Option<&Session>, event: &SessionEvent) -> Result<Session, DomainError> {
    match state {
        None => create(event),
        Some(session) => {
            let mut next = session.clone();
            next.apply_in_place(event)?;
            Ok(next)
        }
    }
}

/// Left fold of [`apply_event`] over a complete log.
pub fn replay(events: &[SessionEvent]) -> Result<Session, ReplayError> {
    let (first, rest) = events
        .split_first()
        .ok_or(ReplayError::MissingCreationEvent)?;
    if first.kind() != EventKind::SessionCreated {
        return Err(ReplayError::MissingCreationEvent);
    }
    let mut session = create(first).map_err(|error| ReplayError::Event {
        sequence_no: first.sequence_no,
        error,
    })?;
    for event in rest {
        session
            .apply_in_place(event)
            .map_err(|error| ReplayError::Event {
                sequence_no: event.sequence_no,
                error,
            })?;
    }
    Ok(session)
}

fn create(event: &SessionEvent) -> Result<Session, DomainError> {
    let EventBody::SessionCreated(created) = &event.body else {
        return Err(DomainError::MissingCreationEvent);
    };
    if event.sequence_no != 1 {
        return Err(DomainError::OutOfOrderEvent {
            expected: 1,
            found: event.sequence_no,
        });
    }
    if created.schema_version != SCHEMA_VERSION {
        return Err(DomainError::UnsupportedSchemaVersion(created.schema_version));
    }
    created.question.validate()?;
    if created.max_iterations == 0 {
        return Err(DomainError::InvalidDefinition(
            "max_iterations must be at least 1".into(),
        ));
    }
    if created.expected_participants == 0 {
        return Err(DomainError::InvalidDefinition(
            "expected_participants must be at least 1".into(),
        ));
    }
    Ok(Session {
        id: created.session_id.clone(),
        question: created.question.clone(),
        llm_provider_id: created.llm_provider_id.clone(),
        expected_participants: created.expected_participants,
        max_iterations: created.max_iterations,
        participants: Vec::new(),
        opinions: Vec::new(),
        phase: Phase::CollectingOpinions,
        iterations: Vec::new(),
        pending_strategy: None,
        consensus_announced: false,
        end_reason: None,
        created_at: event.timestamp,
        last_activity: event.timestamp,
        last_sequence_no: 1,
    })
}

impl Session {
    fn illegal(&self, kind: EventKind, reason: impl Into<String>) -> DomainError {
        DomainError::IllegalTransition {
            kind,
            phase: self.phase,
            reason: reason.into(),
        }
    }

    fn require_phase(&self, kind: EventKind, phase: Phase) -> Result<(), DomainError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(self.illegal(kind, format!("requires phase {phase}")))
        }
    }

    fn require_current_iteration(&self, kind: EventKind, index: u32) -> Result<(), DomainError> {
        match self.current_iteration() {
            Some(it) if it.index() == index => Ok(()),
            _ => Err(self.illegal(
                kind,
                format!(
                    "iteration {index} is not the current iteration ({})",
                    self.iteration_count()
                ),
            )),
        }
    }

    /// Validates first, then mutates; a rejected event leaves `self` untouched.
    fn apply_in_place(&mut self, event: &SessionEvent) -> Result<(), DomainError> {
        let expected = self.last_sequence_no + 1;
        if event.sequence_no != expected {
            return Err(DomainError::OutOfOrderEvent {
                expected,
                found: event.sequence_no,
            });
        }
        let kind = event.kind();
        if self.phase.is_terminal() && kind != EventKind::ConsensusReached {
            return Err(self.illegal(kind, "session is finished"));
        }

        match &event.body {
            EventBody::SessionCreated(_) => {
                return Err(self.illegal(kind, "session already exists"));
            }
            EventBody::ParticipantJoined(p) => {
                self.require_phase(kind, Phase::CollectingOpinions)?;
                if self.participants.len() as u32 >= self.expected_participants {
                    return Err(self.illegal(kind, "session is full"));
                }
                if self.participant(&p.id).is_some() {
                    return Err(self.illegal(kind, format!("participant {} already joined", p.id)));
                }
                self.participants.push(p.clone());
            }
            EventBody::OpinionPosted(op) => {
                self.require_phase(kind, Phase::CollectingOpinions)?;
                if self.participant(&op.participant_id).is_none() {
                    return Err(self.illegal(kind, format!("unknown participant {}", op.participant_id)));
                }
                if self.opinion_of(&op.participant_id).is_some() {
                    return Err(self.illegal(
                        kind,
                        format!("participant {} already posted an opinion", op.participant_id),
                    ));
                }
                if op.text.trim().is_empty() {
                    return Err(self.illegal(kind, "opinion text is empty"));
                }
                self.opinions.push(Opinion {
                    participant_id: op.participant_id.clone(),
                    text: op.text.clone(),
                    timestamp: event.timestamp,
                });
                if self.all_opinions_in() {
                    self.phase = Phase::Synthesizing;
                }
            }
            EventBody::ProposalIssued(p) => {
                if p.text.trim().is_empty() {
                    return Err(self.illegal(kind, "proposal text is empty"));
                }
                match self.phase {
                    Phase::Synthesizing => {
                        if p.iteration_index != 1 || p.strategy_used.is_some() {
                            return Err(self.illegal(
                                kind,
                                "the initial proposal must be iteration 1 with no strategy",
                            ));
                        }
                    }
                    Phase::SelectingStrategy => {
                        let Some(pending) = self.pending_strategy else {
                            return Err(self.illegal(kind, "no strategy has been selected"));
                        };
                        if p.iteration_index != self.iteration_count() + 1 {
                            return Err(self.illegal(
                                kind,
                                format!("expected iteration {}", self.iteration_count() + 1),
                            ));
                        }
                        if p.strategy_used != Some(pending) {
                            return Err(self.illegal(
                                kind,
                                format!("revision must use the selected strategy {pending}"),
                            ));
                        }
                    }
                    _ => return Err(self.illegal(kind, "no proposal is being prepared")),
                }
                if self.iteration_count() >= self.max_iterations {
                    return Err(self.illegal(kind, "iteration cap reached"));
                }
                self.iterations.push(IterationRecord {
                    proposal: Proposal {
                        iteration_index: p.iteration_index,
                        text: p.text.clone(),
                        strategy_used: p.strategy_used,
                    },
                    verdicts: Vec::new(),
                    feedbacks: Vec::new(),
                });
                self.pending_strategy = None;
                self.phase = Phase::AwaitingVerdicts;
            }
            EventBody::VerdictPosted(v) => {
                self.require_phase(kind, Phase::AwaitingVerdicts)?;
                self.require_current_iteration(kind, v.iteration_index)?;
                if self.participant(&v.participant_id).is_none() {
                    return Err(self.illegal(kind, format!("unknown participant {}", v.participant_id)));
                }
                let expected = self.expected_participants as usize;
                let it = self.iterations.last_mut().expect("checked above");
                if it.verdict_of(&v.participant_id).is_some() {
                    return Err(DomainError::IllegalTransition {
                        kind,
                        phase: Phase::AwaitingVerdicts,
                        reason: format!("duplicate verdict from {}", v.participant_id),
                    });
                }
                it.verdicts.push(v.clone());
                if it.verdicts.len() == expected {
                    self.phase = if it.has_reject() {
                        Phase::CollectingFeedback
                    } else {
                        Phase::ConsensusReached
                    };
                }
            }
            EventBody::FeedbackPosted(fb) => {
                self.require_phase(kind, Phase::CollectingFeedback)?;
                self.require_current_iteration(kind, fb.iteration_index)?;
                if fb.text.trim().is_empty() {
                    return Err(self.illegal(kind, "feedback text is empty"));
                }
                let it = self.iterations.last_mut().expect("checked above");
                let rejected = it
                    .verdict_of(&fb.participant_id)
                    .is_some_and(|v| !v.accept);
                if !rejected {
                    return Err(DomainError::IllegalTransition {
                        kind,
                        phase: Phase::CollectingFeedback,
                        reason: format!("{} did not reject the proposal", fb.participant_id),
                    });
                }
                if it.feedback_of(&fb.participant_id).is_some() {
                    return Err(DomainError::IllegalTransition {
                        kind,
                        phase: Phase::CollectingFeedback,
                        reason: format!("duplicate feedback from {}", fb.participant_id),
                    });
                }
                it.feedbacks.push(fb.clone());
                if it.feedbacks.len() == it.rejectors().count() {
                    self.phase = Phase::SelectingStrategy;
                }
            }
            EventBody::StrategySelected(s) => {
                self.require_phase(kind, Phase::SelectingStrategy)?;
                self.require_current_iteration(kind, s.iteration_index)?;
                if self.pending_strategy.is_some() {
                    return Err(self.illegal(kind, "a strategy is already selected"));
                }
                if self.iteration_count() >= self.max_iterations {
                    return Err(self.illegal(kind, "iteration cap reached"));
                }
                self.pending_strategy = Some(s.strategy);
            }
            EventBody::ConsensusReached(c) => {
                self.require_phase(kind, Phase::ConsensusReached)?;
                self.require_current_iteration(kind, c.iteration_index)?;
                if self.consensus_announced {
                    return Err(self.illegal(kind, "consensus already announced"));
                }
                self.consensus_announced = true;
            }
            EventBody::SessionEnded(end) => {
                match end.reason {
                    EndReason::IterationCap => {
                        let at_cap = self.phase == Phase::SelectingStrategy
                            && self.pending_strategy.is_none()
                            && self.iteration_count() >= self.max_iterations;
                        if !at_cap {
                            return Err(self.illegal(kind, "iteration cap not reached"));
                        }
                    }
                    EndReason::Timeout => {}
                }
                if end.iteration_count != self.iteration_count() {
                    return Err(self.illegal(
                        kind,
                        format!(
                            "iteration_count {} does not match {}",
                            end.iteration_count,
                            self.iteration_count()
                        ),
                    ));
                }
                self.phase = Phase::EndedNoConsensus;
                self.end_reason = Some(end.reason);
            }
        }

        self.last_sequence_no = event.sequence_no;
        self.last_activity = event.timestamp;
        Ok(())
    }
}

/// Shorthand constructors used by the service, the simulator and tests.
impl EventBody {
    pub fn created(
        session_id: SessionId,
        question: Question,
        llm_provider_id: impl Into<String>,
        max_iterations: u32,
        expected_participants: u32,
    ) -> Self {
        EventBody::SessionCreated(SessionCreated {
            schema_version: SCHEMA_VERSION,
            session_id,
            question,
            llm_provider_id: llm_provider_id.into(),
            max_iterations,
            expected_participants,
        })
    }

    pub fn joined(id: impl Into<String>, display_name: impl Into<String>) -> Self {
        EventBody::ParticipantJoined(Participant::new(id, display_name))
    }

    pub fn opinion(participant: impl Into<String>, text: impl Into<String>) -> Self {
        EventBody::OpinionPosted(OpinionPosted {
            participant_id: ParticipantId::new(participant),
            text: text.into(),
        })
    }

    pub fn proposal(
        iteration_index: u32,
        text: impl Into<String>,
        strategy_used: Option<Strategy>,
        directive_key: impl Into<String>,
    ) -> Self {
        EventBody::ProposalIssued(ProposalIssued {
            iteration_index,
            text: text.into(),
            strategy_used,
            directive_key: directive_key.into(),
        })
    }

    pub fn verdict(participant: impl Into<String>, iteration_index: u32, accept: bool) -> Self {
        EventBody::VerdictPosted(Verdict {
            participant_id: ParticipantId::new(participant),
            iteration_index,
            accept,
        })
    }

    pub fn feedback(participant: impl Into<String>, iteration_index: u32, text: impl Into<String>) -> Self {
        EventBody::FeedbackPosted(Feedback {
            participant_id: ParticipantId::new(participant),
            iteration_index,
            text: text.into(),
        })
    }

    pub fn strategy(iteration_index: u32, strategy: Strategy, directive_key: impl Into<String>) -> Self {
        EventBody::StrategySelected(StrategySelected {
            iteration_index,
            strategy,
            raw_response: strategy.name().to_owned(),
            fallback: false,
            directive_key: directive_key.into(),
        })
    }

    pub fn consensus(iteration_index: u32) -> Self {
        EventBody::ConsensusReached(ConsensusAnnounced { iteration_index })
    }

    pub fn ended(reason: EndReason, iteration_count: u32) -> Self {
        EventBody::SessionEnded(SessionEnded {
            reason,
            iteration_count,
        })
    }
}

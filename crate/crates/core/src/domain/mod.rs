//! Shared vocabulary for facilitated sessions and the event model that
//! drives them.
//!
//! A [`Session`] is never mutated directly. Every change is recorded as a
//! [`SessionEvent`] and folded into the state with [`apply_event`]; a
//! session's event log is therefore its source of truth and [`replay`]
//! reconstructs it deterministically.

mod event;
mod log;
pub mod transcript;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use event::{
    apply_event, replay, ConsensusAnnounced, EventBody, EventKind, OpinionPosted, ProposalIssued,
    ReplayError, SessionCreated, SessionEnded, SessionEvent, StrategySelected,
};
pub use log::SessionLog;

/// Version tag carried in every `SessionCreated` payload.
pub const SCHEMA_VERSION: u32 = 1;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Opaque question identifier (`Q1`..`Q6` for the built-in bank).
    QuestionId
);
string_id!(SessionId);
string_id!(ParticipantId);

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("out-of-order event: expected sequence_no {expected}, found {found}")]
    OutOfOrderEvent { expected: u64, found: u64 },
    #[error("{kind} is not allowed in phase {phase}: {reason}")]
    IllegalTransition {
        kind: EventKind,
        phase: Phase,
        reason: String,
    },
    #[error("the first event of a session must be SessionCreated")]
    MissingCreationEvent,
    #[error("unsupported transcript schema version {0}")]
    UnsupportedSchemaVersion(u32),
    #[error("invalid session definition: {0}")]
    InvalidDefinition(String),
}

/// Sustainable-development topic attached to a question.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SdgTag {
    GoodHealthWellBeing,
    QualityEducation,
    CleanWaterSanitation,
    ClimateAction,
}

impl SdgTag {
    pub const ALL: [SdgTag; 4] = [
        SdgTag::GoodHealthWellBeing,
        SdgTag::ClimateAction,
        SdgTag::QualityEducation,
        SdgTag::CleanWaterSanitation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SdgTag::GoodHealthWellBeing => "GoodHealthWellBeing",
            SdgTag::QualityEducation => "QualityEducation",
            SdgTag::CleanWaterSanitation => "CleanWaterSanitation",
            SdgTag::ClimateAction => "ClimateAction",
        }
    }

    /// Human-readable topic label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            SdgTag::GoodHealthWellBeing => "Good Health and Well-Being",
            SdgTag::QualityEducation => "Quality Education",
            SdgTag::CleanWaterSanitation => "Clean water and sanitation",
            SdgTag::ClimateAction => "Climate action",
        }
    }
}

impl fmt::Display for SdgTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: QuestionId,
    pub text: String,
    pub sdg_tag: SdgTag,
}

impl Question {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        sdg_tag: SdgTag,
    ) -> Result<Self, DomainError> {
        let question = Self {
            id: QuestionId::new(id),
            text: text.into(),
            sdg_tag,
        };
        question.validate()?;
        Ok(question)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.text.trim().is_empty() {
            return Err(DomainError::InvalidDefinition(format!(
                "question {} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub id: ParticipantId,
    pub display_name: String,
}

impl Participant {
    pub fn new(id: impl Into<String>, display_name: impl Into<String>) -> Self {
        Self {
            id: ParticipantId::new(id),
            display_name: display_name.into(),
        }
    }
}

/// The five facilitation moves available after a rejected proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    ClarifyUnderstanding,
    SummarizeDiscussion,
    HighlightCommonGround,
    ProposeCompromise,
    ReframeQuestion,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::ClarifyUnderstanding,
        Strategy::SummarizeDiscussion,
        Strategy::HighlightCommonGround,
        Strategy::ProposeCompromise,
        Strategy::ReframeQuestion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::ClarifyUnderstanding => "ClarifyUnderstanding",
            Strategy::SummarizeDiscussion => "SummarizeDiscussion",
            Strategy::HighlightCommonGround => "HighlightCommonGround",
            Strategy::ProposeCompromise => "ProposeCompromise",
            Strategy::ReframeQuestion => "ReframeQuestion",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Exact canonical-name parse. Tolerant parsing of model output lives in
/// [`crate::llm::parse_strategy`].
impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Opinion {
    pub participant_id: ParticipantId,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub iteration_index: u32,
    pub text: String,
    pub strategy_used: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub participant_id: ParticipantId,
    pub iteration_index: u32,
    pub accept: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub participant_id: ParticipantId,
    pub iteration_index: u32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub proposal: Proposal,
    pub verdicts: Vec<Verdict>,
    pub feedbacks: Vec<Feedback>,
}

impl IterationRecord {
    pub fn index(&self) -> u32 {
        self.proposal.iteration_index
    }

    pub fn verdict_of(&self, participant: &ParticipantId) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| &v.participant_id == participant)
    }

    pub fn feedback_of(&self, participant: &ParticipantId) -> Option<&Feedback> {
        self.feedbacks
            .iter()
            .find(|f| &f.participant_id == participant)
    }

    pub fn rejectors(&self) -> impl Iterator<Item = &ParticipantId> {
        self.verdicts
            .iter()
            .filter(|v| !v.accept)
            .map(|v| &v.participant_id)
    }

    pub fn has_reject(&self) -> bool {
        self.verdicts.iter().any(|v| !v.accept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    CollectingOpinions,
    Synthesizing,
    AwaitingVerdicts,
    CollectingFeedback,
    SelectingStrategy,
    ConsensusReached,
    EndedNoConsensus,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::ConsensusReached | Phase::EndedNoConsensus)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EndReason {
    /// The last allowed proposal was rejected.
    IterationCap,
    /// Participants did not respond before the inactivity deadline.
    Timeout,
}

/// Derived state of one discussion. Built only by folding events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub id: SessionId,
    pub question: Question,
    pub llm_provider_id: String,
    pub expected_participants: u32,
    pub max_iterations: u32,
    pub participants: Vec<Participant>,
    pub opinions: Vec<Opinion>,
    pub phase: Phase,
    pub iterations: Vec<IterationRecord>,
    /// Strategy chosen for the next revision, cleared once it is issued.
    pub pending_strategy: Option<Strategy>,
    pub consensus_announced: bool,
    pub end_reason: Option<EndReason>,
    pub created_at: DateTime<Utc>,
    pub last_activity: DateTime<Utc>,
    pub last_sequence_no: u64,
}

impl Session {
    pub fn participant(&self, id: &ParticipantId) -> Option<&Participant> {
        self.participants.iter().find(|p| &p.id == id)
    }

    pub fn opinion_of(&self, id: &ParticipantId) -> Option<&Opinion> {
        self.opinions.iter().find(|o| &o.participant_id == id)
    }

    pub fn current_iteration(&self) -> Option<&IterationRecord> {
        self.iterations.last()
    }

    pub fn iteration_count(&self) -> u32 {
        self.iterations.len() as u32
    }

    pub fn all_opinions_in(&self) -> bool {
        self.opinions.len() as u32 == self.expected_participants
    }

    pub fn is_terminal(&self) -> bool {
        self.phase.is_terminal()
    }

    /// Iteration at which every participant accepted, if any.
    pub fn consensus_iteration(&self) -> Option<u32> {
        match self.phase {
            Phase::ConsensusReached => self.current_iteration().map(IterationRecord::index),
            _ => None,
        }
    }

    pub fn accepted_proposal(&self) -> Option<&Proposal> {
        match self.phase {
            Phase::ConsensusReached => self.current_iteration().map(|it| &it.proposal),
            _ => None,
        }
    }
}

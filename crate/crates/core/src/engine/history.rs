use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{ParticipantId, Session, Strategy};

/// Everything the facilitator sees when it is asked for a proposal or a
/// strategy, in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationHistory {
    pub question: String,
    pub items: Vec<HistoryItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum HistoryItem {
    Opinion {
        participant_id: ParticipantId,
        display_name: String,
        text: String,
    },
    Proposal {
        iteration_index: u32,
        text: String,
        strategy_used: Option<Strategy>,
    },
    Verdict {
        participant_id: ParticipantId,
        display_name: String,
        iteration_index: u32,
        accept: bool,
    },
    Feedback {
        participant_id: ParticipantId,
        display_name: String,
        iteration_index: u32,
        text: String,
    },
}

impl ConversationHistory {
    pub fn from_session(session: &Session) -> Self {
        let name = |id: &ParticipantId| {
            session
                .participant(id)
                .map(|p| p.display_name.clone())
                .unwrap_or_else(|| id.to_string())
        };
        let mut items = Vec::new();
        for op in &session.opinions {
            items.push(HistoryItem::Opinion {
                participant_id: op.participant_id.clone(),
                display_name: name(&op.participant_id),
                text: op.text.clone(),
            });
        }
        for it in &session.iterations {
            items.push(HistoryItem::Proposal {
                iteration_index: it.index(),
                text: it.proposal.text.clone(),
                strategy_used: it.proposal.strategy_used,
            });
            for v in &it.verdicts {
                items.push(HistoryItem::Verdict {
                    participant_id: v.participant_id.clone(),
                    display_name: name(&v.participant_id),
                    iteration_index: v.iteration_index,
                    accept: v.accept,
                });
            }
            for f in &it.feedbacks {
                items.push(HistoryItem::Feedback {
                    participant_id: f.participant_id.clone(),
                    display_name: name(&f.participant_id),
                    iteration_index: f.iteration_index,
                    text: f.text.clone(),
                });
            }
        }
        Self {
            question: session.question.text.clone(),
            items,
        }
    }

    pub fn proposal_count(&self) -> u32 {
        self.items
            .iter()
            .filter(|i| matches!(i, HistoryItem::Proposal { .. }))
            .count() as u32
    }

    pub fn opinions(&self) -> impl Iterator<Item = &HistoryItem> {
        self.items
            .iter()
            .filter(|i| matches!(i, HistoryItem::Opinion { .. }))
    }

    /// Hex SHA-256 of the canonical JSON form. Used as a lookup key by the
    /// scripted provider.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("history serializes");
        hex::encode(Sha256::digest(json))
    }
}

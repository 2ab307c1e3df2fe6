use chrono::{TimeZone, Utc};

use super::*;
use crate::domain::{EndReason, EventBody, Question, SdgTag, SessionLog};

fn log_with(cap: u32, bodies: Vec<EventBody>) -> SessionLog {
    let mut log = SessionLog::new();
    let t = Utc.timestamp_opt(1_700_000_000, 0).unwrap();
    let q = Question::new("Q1", "Should we?", SdgTag::QualityEducation).unwrap();
    log.append(EventBody::created("s".into(), q, "scripted", cap, 2), t).unwrap();
    log.append(EventBody::joined("p1", "Ann"), t).unwrap();
    log.append(EventBody::joined("p2", "Bo"), t).unwrap();
    for b in bodies {
        log.append(b, t).unwrap();
    }
    log
}

fn kind_of(log: &SessionLog) -> DirectiveKind {
    step(log.session().unwrap()).kind
}

#[test]
fn opinions_then_initial_proposal() {
    let log = log_with(5, vec![EventBody::opinion("p1", "a")]);
    let d = step(log.session().unwrap());
    assert_eq!(d.kind, DirectiveKind::WaitForHumans);
    assert_eq!(d.awaiting, vec![ParticipantId::new("p2")]);

    let log = log_with(5, vec![EventBody::opinion("p1", "a"), EventBody::opinion("p2", "b")]);
    let d = step(log.session().unwrap());
    assert_eq!(d.kind, DirectiveKind::RequestInitialProposal);
    assert_eq!(d.iteration_index, 1);
    assert_eq!(d.context.opinions().count(), 2);
    assert_eq!(d.idempotency_key(&"s".into()).as_deref(), Some("s/propose/1"));
}

#[test]
fn rejection_with_feedback_requests_strategy_then_revision() {
    let mut bodies = vec![
        EventBody::opinion("p1", "a"),
        EventBody::opinion("p2", "b"),
        EventBody::proposal(1, "P1", None, "k"),
        EventBody::verdict("p1", 1, true),
        EventBody::verdict("p2", 1, false),
    ];
    let log = log_with(5, bodies.clone());
    let d = step(log.session().unwrap());
    assert_eq!(d.kind, DirectiveKind::WaitForHumans);
    assert_eq!(d.awaiting, vec![ParticipantId::new("p2")]);

    bodies.push(EventBody::feedback("p2", 1, "no"));
    let log = log_with(5, bodies.clone());
    assert_eq!(kind_of(&log), DirectiveKind::RequestStrategySelection);

    bodies.push(EventBody::strategy(1, Strategy::HighlightCommonGround, "k"));
    let log = log_with(5, bodies);
    let d = step(log.session().unwrap());
    assert_eq!(d.kind, DirectiveKind::RequestRevisedProposal);
    assert_eq!(d.iteration_index, 2);
    assert_eq!(d.strategy, Some(Strategy::HighlightCommonGround));
}

#[test]
fn cap_with_rejection_announces_no_consensus() {
    let mut bodies = vec![EventBody::opinion("p1", "a"), EventBody::opinion("p2", "b")];
    for i in 1..=5u32 {
        let strategy = (i > 1).then_some(Strategy::ProposeCompromise);
        if i > 1 {
            bodies.push(EventBody::strategy(i - 1, Strategy::ProposeCompromise, "k"));
        }
        bodies.push(EventBody::proposal(i, format!("P{i}"), strategy, "k"));
        bodies.push(EventBody::verdict("p1", i, true));
        bodies.push(EventBody::verdict("p2", i, false));
        bodies.push(EventBody::feedback("p2", i, "no"));
    }
    let mut log = log_with(5, bodies);
    assert_eq!(kind_of(&log), DirectiveKind::AnnounceNoConsensus);
    log.append(EventBody::ended(EndReason::IterationCap, 5), Utc::now()).unwrap();
    assert_eq!(kind_of(&log), DirectiveKind::AnnounceNoConsensus);
}

#[test]
fn unanimity_announces_consensus() {
    let log = log_with(
        5,
        vec![
            EventBody::opinion("p1", "a"),
            EventBody::opinion("p2", "b"),
            EventBody::proposal(1, "P1", None, "k"),
            EventBody::verdict("p2", 1, true),
            EventBody::verdict("p1", 1, true),
        ],
    );
    assert_eq!(kind_of(&log), DirectiveKind::AnnounceConsensus);
}

#[test]
fn consensus_check() {
    let v = |p: &str, accept| Verdict {
        participant_id: p.into(),
        iteration_index: 1,
        accept,
    };
    assert_eq!(accept_consensus_check(&[v("a", true), v("b", true)], 2), Ok(true));
    assert_eq!(accept_consensus_check(&[v("a", true), v("b", false)], 2), Ok(false));
    assert_eq!(accept_consensus_check(&[v("a", true)], 2), Ok(false));
    assert_eq!(
        accept_consensus_check(&[v("a", true), v("a", true)], 2),
        Err(EngineError::DuplicateVerdict("a".into()))
    );
}

#[test]
fn pending_actions_follow_phase() {
    let log = log_with(
        5,
        vec![
            EventBody::opinion("p1", "a"),
            EventBody::opinion("p2", "b"),
            EventBody::proposal(1, "P1", None, "k"),
            EventBody::verdict("p1", 1, true),
            EventBody::verdict("p2", 1, false),
        ],
    );
    let s = log.session().unwrap();
    assert_eq!(pending_action(s, &"p1".into()), PendingAction::Wait);
    assert_eq!(pending_action(s, &"p2".into()), PendingAction::GiveFeedback);
}

#[test]
fn history_is_chronological() {
    let log = log_with(
        5,
        vec![
            EventBody::opinion("p1", "a"),
            EventBody::opinion("p2", "b"),
            EventBody::proposal(1, "P1", None, "k"),
            EventBody::verdict("p1", 1, false),
            EventBody::verdict("p2", 1, true),
            EventBody::feedback("p1", 1, "why"),
        ],
    );
    let h = ConversationHistory::from_session(log.session().unwrap());
    let tags: Vec<&str> = h
        .items
        .iter()
        .map(|i| match i {
            HistoryItem::Opinion { .. } => "o",
            HistoryItem::Proposal { .. } => "p",
            HistoryItem::Verdict { .. } => "v",
            HistoryItem::Feedback { .. } => "f",
        })
        .collect();
    assert_eq!(tags, ["o", "o", "p", "v", "v", "f"]);
    assert_eq!(h.content_hash(), h.clone().content_hash());
}

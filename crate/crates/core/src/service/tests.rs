use std::sync::atomic::{AtomicBool, Ordering};

use chrono::{TimeZone, Utc};

use super::*;
use crate::clock::SteppingClock;
use crate::domain::{EventKind, Strategy};
use crate::llm::{BackendCall, BackendError, BackendReply, LlmBackend, RequestKind, RetryPolicy, ScriptedProvider};

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.to_owned(),
        ..ServiceConfig::default()
    }
}

fn scripted_gateway() -> Gateway {
    let provider = ScriptedProvider::with_defaults().respond(RequestKind::SelectStrategy, None, "ProposeCompromise");
    Gateway::builder()
        .backend("scripted", Arc::new(provider), RetryPolicy::default())
        .build()
}

fn clock() -> Arc<SteppingClock> {
    Arc::new(SteppingClock::new(Utc.timestamp_opt(1_700_000_000, 0).unwrap(), 1000))
}

fn service(dir: &Path) -> SessionService {
    SessionService::open_with_clock(config(dir), scripted_gateway(), clock()).unwrap()
}

fn create(svc: &SessionService, max: u32) -> SessionId {
    svc.create_session(CreateSession {
        question_id: "Q1".into(),
        llm_provider_id: Some("scripted".into()),
        max_iterations: Some(max),
        expected_participants: 2,
    })
    .unwrap()
}

fn joined(svc: &SessionService, max: u32) -> (SessionId, ParticipantId, ParticipantId) {
    let id = create(svc, max);
    let a = svc.join(&id, Some("Ann".into())).unwrap().participant_id;
    let b = svc.join(&id, None).unwrap().participant_id;
    (id, a, b)
}

fn kinds(svc: &SessionService, id: &SessionId, since: u64) -> Vec<EventKind> {
    svc.events_since(id, since).unwrap().iter().map(|e| e.kind()).collect()
}

#[test]
fn questions_are_preloaded() {
    let bank = QuestionBank::builtin();
    assert_eq!(bank.all().len(), 6);
    assert_eq!(bank.get(&"Q6".into()).unwrap().sdg_tag, crate::domain::SdgTag::ClimateAction);
    assert!(bank.get(&"Q5".into()).unwrap().text.contains("clean drinking water"));
}

#[test]
fn create_session_validation() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = create(&svc, 5);
    assert_eq!(svc.session(&id).unwrap().phase, Phase::CollectingOpinions);

    let req = |q: &str, p: Option<&str>, max, n| CreateSession {
        question_id: q.into(),
        llm_provider_id: p.map(str::to_owned),
        max_iterations: max,
        expected_participants: n,
    };
    assert!(matches!(svc.create_session(req("Q99", None, None, 2)), Err(ServiceError::UnknownQuestion(_))));
    assert!(matches!(svc.create_session(req("Q1", Some("nope"), None, 2)), Err(ServiceError::UnknownProvider(_))));
    assert!(matches!(svc.create_session(req("Q1", None, Some(0), 2)), Err(ServiceError::InvalidMaxIterations)));
    assert!(matches!(
        svc.create_session(req("Q1", None, None, 1)),
        Err(ServiceError::InvalidParticipantCount { got: 1, .. })
    ));
    assert!(matches!(svc.create_session(req("Q1", None, None, 9)), Err(ServiceError::InvalidParticipantCount { .. })));
    let id = svc.create_session(req("Q2", None, None, 8)).unwrap();
    assert_eq!(svc.session(&id).unwrap().max_iterations, 5);
}

#[test]
fn join_tokens_and_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = create(&svc, 5);
    let t1 = svc.join(&id, Some("Ann".into())).unwrap();
    assert_eq!(t1.participant_id.as_str(), "p1");
    assert_eq!(svc.authenticate(&id, &t1.token).unwrap(), t1.participant_id);
    assert!(matches!(svc.authenticate(&id, "p1.00"), Err(ServiceError::InvalidToken)));
    let forged = t1.token.replace("p1.", "p2.");
    assert!(matches!(svc.authenticate(&id, &forged), Err(ServiceError::InvalidToken)));
    svc.join(&id, None).unwrap();
    assert!(matches!(svc.join(&id, None), Err(ServiceError::SessionFull)));

    let other = create(&svc, 5);
    assert!(svc.authenticate(&other, &t1.token).is_err());
}

#[test]
fn second_opinion_triggers_initial_proposal() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (id, a, b) = joined(&svc, 5);
    let ack = svc.submit_opinion(&id, &a, "tax sugar").unwrap();
    assert_eq!(ack.phase, Phase::CollectingOpinions);
    assert!(matches!(svc.submit_opinion(&id, &a, "again"), Err(ServiceError::DuplicateOpinion(_))));
    assert!(matches!(svc.submit_opinion(&id, &"p9".into(), "x"), Err(ServiceError::UnknownParticipant(_))));
    let ack = svc.submit_opinion(&id, &b, "educate").unwrap();
    assert_eq!(ack.phase, Phase::AwaitingVerdicts);
    assert_eq!(kinds(&svc, &id, ack.sequence_no), vec![EventKind::ProposalIssued]);
    assert_eq!(svc.intents(&id).unwrap()[0].key, format!("{id}/propose/1"));
}

#[test]
fn unanimous_accept_reaches_consensus() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (id, a, b) = joined(&svc, 5);
    svc.submit_opinion(&id, &a, "x").unwrap();
    svc.submit_opinion(&id, &b, "y").unwrap();
    let ack = svc.submit_verdict(&id, &a, true).unwrap();
    assert_eq!(ack.phase, Phase::AwaitingVerdicts);
    assert!(matches!(svc.submit_verdict(&id, &a, false), Err(ServiceError::DuplicateVerdict(_))));
    let ack = svc.submit_verdict(&id, &b, true).unwrap();
    assert_eq!(ack.phase, Phase::ConsensusReached);
    assert_eq!(kinds(&svc, &id, ack.sequence_no), vec![EventKind::ConsensusReached]);
    assert!(matches!(svc.submit_opinion(&id, &a, "late"), Err(ServiceError::WrongPhase(_))));
    assert_eq!(svc.snapshot(&id).unwrap().pending_actions[&a], PendingAction::Done);
}

#[test]
fn feedback_drives_strategy_then_revision() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (id, a, b) = joined(&svc, 5);
    svc.submit_opinion(&id, &a, "x").unwrap();
    svc.submit_opinion(&id, &b, "y").unwrap();
    svc.submit_verdict(&id, &a, false).unwrap();
    let ack = svc.submit_verdict(&id, &b, true).unwrap();
    assert_eq!(ack.phase, Phase::CollectingFeedback);
    let snap = svc.snapshot(&id).unwrap();
    assert_eq!(snap.pending_actions[&a], PendingAction::GiveFeedback);
    assert_eq!(snap.pending_actions[&b], PendingAction::Wait);

    assert!(matches!(svc.submit_feedback(&id, &b, "fine"), Err(ServiceError::NotARejector(_))));
    let ack = svc.submit_feedback(&id, &a, "too vague").unwrap();
    assert!(matches!(svc.submit_feedback(&id, &a, "more"), Err(ServiceError::WrongPhase(_))));
    assert_eq!(
        kinds(&svc, &id, ack.sequence_no),
        vec![EventKind::StrategySelected, EventKind::ProposalIssued]
    );
    let s = svc.session(&id).unwrap();
    assert_eq!(s.phase, Phase::AwaitingVerdicts);
    assert_eq!(s.iterations[1].proposal.strategy_used, Some(Strategy::ProposeCompromise));
}

#[test]
fn rejection_at_cap_ends_session() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (id, a, b) = joined(&svc, 1);
    svc.submit_opinion(&id, &a, "x").unwrap();
    svc.submit_opinion(&id, &b, "y").unwrap();
    svc.submit_verdict(&id, &a, false).unwrap();
    svc.submit_verdict(&id, &b, false).unwrap();
    svc.submit_feedback(&id, &a, "no").unwrap();
    let ack = svc.submit_feedback(&id, &b, "no").unwrap();
    assert_eq!(ack.phase, Phase::EndedNoConsensus);
    assert_eq!(kinds(&svc, &id, ack.sequence_no), vec![EventKind::SessionEnded]);
    assert_eq!(svc.session(&id).unwrap().end_reason, Some(EndReason::IterationCap));
}

#[test]
fn idle_sessions_time_out() {
    let dir = tempfile::tempdir().unwrap();
    let clock = clock();
    let svc = SessionService::open_with_clock(config(dir.path()), scripted_gateway(), clock.clone()).unwrap();
    let (id, a, b) = joined(&svc, 5);
    svc.submit_opinion(&id, &a, "x").unwrap();
    assert!(svc.expire_idle().is_empty(), "no opinion timeout by default");
    svc.submit_opinion(&id, &b, "y").unwrap();
    clock.advance(599_000);
    assert!(svc.expire_idle().is_empty());
    clock.advance(2_000);
    assert_eq!(svc.expire_idle(), vec![id.clone()]);
    let s = svc.session(&id).unwrap();
    assert_eq!(s.phase, Phase::EndedNoConsensus);
    assert_eq!(s.end_reason, Some(EndReason::Timeout));
}

#[test]
fn least_used_provider_is_assigned() {
    let dir = tempfile::tempdir().unwrap();
    let gateway = Gateway::builder()
        .backend("b", Arc::new(ScriptedProvider::with_defaults()), RetryPolicy::default())
        .backend("a", Arc::new(ScriptedProvider::with_defaults()), RetryPolicy::default())
        .unavailable("c", "no key")
        .build();
    let svc = SessionService::open_with_clock(config(dir.path()), gateway, clock()).unwrap();
    let mut picked = Vec::new();
    for _ in 0..4 {
        let id = svc
            .create_session(CreateSession {
                question_id: "Q3".into(),
                llm_provider_id: None,
                max_iterations: None,
                expected_participants: 2,
            })
            .unwrap();
        picked.push(svc.session(&id).unwrap().llm_provider_id);
    }
    assert_eq!(picked, vec!["a", "b", "a", "b"]);
}

#[test]
fn restart_replays_logs() {
    let dir = tempfile::tempdir().unwrap();
    let (id, before) = {
        let svc = service(dir.path());
        let (id, a, b) = joined(&svc, 5);
        svc.submit_opinion(&id, &a, "x").unwrap();
        svc.submit_opinion(&id, &b, "y").unwrap();
        svc.submit_verdict(&id, &a, false).unwrap();
        (id.clone(), svc.session(&id).unwrap())
    };
    let svc = service(dir.path());
    assert_eq!(svc.session(&id).unwrap(), before);
    svc.submit_verdict(&id, &"p2".into(), true).unwrap();
    assert_eq!(svc.session(&id).unwrap().phase, Phase::CollectingFeedback);
}

#[test]
fn torn_final_line_is_dropped_on_open() {
    let dir = tempfile::tempdir().unwrap();
    let id = {
        let svc = service(dir.path());
        joined(&svc, 5).0
    };
    let path = SessionStore::open(dir.path()).unwrap().log_path(&id);
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("{\"sequence_no\":4,\"timest");
    std::fs::write(&path, text).unwrap();
    let svc = service(dir.path());
    assert_eq!(svc.session(&id).unwrap().last_sequence_no, 3);
    svc.submit_opinion(&id, &"p1".into(), "x").unwrap();
    let reread = crate::domain::transcript::load(&path).unwrap().1;
    assert_eq!(reread.last_sequence_no, 4);
}

struct FlakyReviser {
    inner: ScriptedProvider,
    fail: AtomicBool,
}

impl LlmBackend for FlakyReviser {
    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        if call.request.kind == RequestKind::ReviseWithStrategy && self.fail.load(Ordering::SeqCst) {
            return Err(BackendError::Fatal("process killed".into()));
        }
        self.inner.complete(call)
    }
}

#[test]
fn failed_revision_is_resumed_exactly_once() {
    let dir = tempfile::tempdir().unwrap();
    let backend = Arc::new(FlakyReviser {
        inner: ScriptedProvider::with_defaults(),
        fail: AtomicBool::new(true),
    });
    let gateway = Gateway::builder()
        .backend("scripted", backend.clone(), RetryPolicy::default())
        .build();
    let svc = SessionService::open_with_clock(config(dir.path()), gateway, clock()).unwrap();
    let (id, a, b) = joined(&svc, 5);
    svc.submit_opinion(&id, &a, "x").unwrap();
    svc.submit_opinion(&id, &b, "y").unwrap();
    svc.submit_verdict(&id, &a, false).unwrap();
    svc.submit_verdict(&id, &b, true).unwrap();
    let ack = svc.submit_feedback(&id, &a, "no").unwrap();
    assert!(ack.facilitator_error.is_some());
    assert_eq!(ack.phase, Phase::SelectingStrategy);
    assert_eq!(svc.session(&id).unwrap().pending_strategy, Some(Strategy::SummarizeDiscussion));

    backend.fail.store(false, Ordering::SeqCst);
    let resumed = svc.resume_pending();
    assert_eq!(resumed, vec![(id.clone(), Ok(1))]);
    assert!(svc.resume_pending().is_empty());
    let proposals = kinds(&svc, &id, 0).into_iter().filter(|k| *k == EventKind::ProposalIssued).count();
    assert_eq!(proposals, 2);
    let keys: Vec<_> = svc.intents(&id).unwrap().into_iter().map(|r| r.key).collect();
    assert_eq!(keys.iter().filter(|k| k.ends_with("/propose/2")).count(), 2);
}

#[tokio::test]
async fn stream_replays_backlog_then_closes_on_final_event() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (id, a, b) = joined(&svc, 5);
    svc.submit_opinion(&id, &a, "x").unwrap();
    svc.submit_opinion(&id, &b, "y").unwrap();

    let mut live = svc.subscribe(&id, 2).unwrap();
    svc.submit_verdict(&id, &a, true).unwrap();
    svc.submit_verdict(&id, &b, true).unwrap();

    let mut seen = Vec::new();
    while let Some(e) = live.next().await {
        seen.push(e.sequence_no);
    }
    let total = svc.session(&id).unwrap().last_sequence_no;
    assert_eq!(seen, (3..=total).collect::<Vec<_>>());

    let mut full = svc.subscribe(&id, 0).unwrap();
    let mut n = 0;
    while full.next().await.is_some() {
        n += 1;
    }
    assert_eq!(n, total);
    let mut tail = svc.subscribe(&id, total).unwrap();
    assert!(tail.next().await.is_none());
}

#[test]
fn config_parses_and_validates() {
    let c = ServiceConfig::from_toml_str(
        r#"
        data_dir = "/tmp/x"
        default_max_iterations = 4
        [timeouts]
        verdict_secs = 30
        [[providers]]
        provider_id = "gpt"
        endpoint = "https://example.invalid/v1/chat/completions"
        model = "m"
        credential_env = "GPT_KEY"
        [[providers]]
        provider_id = "scripted"
        kind = "Scripted"
        "#,
    )
    .unwrap();
    assert_eq!(c.providers.len(), 2);
    assert_eq!(c.timeouts.verdict_secs, 30);
    assert_eq!(c.timeouts.feedback_secs, 600);
    assert!(ServiceConfig::from_toml_str("default_max_iterations = 0").is_err());
    assert!(ServiceConfig::from_toml_str("bogus = 1").is_err());
}

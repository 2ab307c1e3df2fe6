//! Live session host: validation of participant input, per-session
//! serialization, persistence, orchestration of model calls and the
//! event feed. [`http`] exposes it over HTTP and server-sent events.

mod config;
pub mod http;
mod questions;
mod store;
mod token;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;
use tracing::{error, info, warn};

use crate::clock::{Clock, SystemClock};
use crate::domain::{
    DomainError, EndReason, EventBody, EventKind, ParticipantId, Phase, Question, QuestionId, Session,
    SessionEvent, SessionId, SessionLog,
};
use crate::engine::{pending_action, step, DirectiveKind, PendingAction};
use crate::llm::Gateway;
use crate::orchestrator::{advance, EventSink, OrchestratorError};

pub use config::{ConfigError, ServiceConfig, Timeouts};
pub use questions::{QuestionBank, QuestionBankError};
pub use store::{valid_session_id, IntentRecord, LogWriter, SessionStore};
pub use token::TokenSigner;

const FEED_CAPACITY: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("no provider is available")]
    NoProviderAvailable,
    #[error("expected participants must be within {min}..={max}, got {got}")]
    InvalidParticipantCount { min: u32, max: u32, got: u32 },
    #[error("max_iterations must be at least 1")]
    InvalidMaxIterations,
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("invalid or foreign token")]
    InvalidToken,
    #[error("session is full")]
    SessionFull,
    #[error("not accepted in phase {0}")]
    WrongPhase(Phase),
    #[error("{0} already posted an opinion")]
    DuplicateOpinion(ParticipantId),
    #[error("{0} already voted on this proposal")]
    DuplicateVerdict(ParticipantId),
    #[error("{0} already gave feedback on this proposal")]
    DuplicateFeedback(ParticipantId),
    #[error("{0} did not reject the current proposal")]
    NotARejector(ParticipantId),
    #[error("text must not be empty")]
    EmptyText,
    #[error(transparent)]
    Question(#[from] QuestionBankError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("storage error: {0}")]
    Storage(String),
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSession {
    pub question_id: QuestionId,
    /// Least-used available provider when unset.
    #[serde(default)]
    pub llm_provider_id: Option<String>,
    #[serde(default)]
    pub max_iterations: Option<u32>,
    #[serde(default = "two")]
    pub expected_participants: u32,
}

fn two() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinTicket {
    pub participant_id: ParticipantId,
    pub token: String,
}

/// Returned for accepted participant input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub sequence_no: u64,
    pub phase: Phase,
    /// Set when the facilitator step that followed failed; it is retried
    /// in the background.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facilitator_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session: Session,
    pub next_step: DirectiveKind,
    pub pending_actions: BTreeMap<ParticipantId, PendingAction>,
}

struct View {
    events: Vec<SessionEvent>,
    session: Session,
}

struct Writer {
    log: SessionLog,
    file: LogWriter,
}

struct Slot {
    id: SessionId,
    writer: Mutex<Writer>,
    view: RwLock<View>,
    feed: broadcast::Sender<SessionEvent>,
}

impl Slot {
    fn new(id: SessionId, log: SessionLog, file: LogWriter) -> Self {
        let view = View {
            events: log.events().to_vec(),
            session: log.session().expect("slot built from a non-empty log").clone(),
        };
        Self {
            id,
            writer: Mutex::new(Writer { log, file }),
            view: RwLock::new(view),
            feed: broadcast::channel(FEED_CAPACITY).0,
        }
    }

    fn session(&self) -> Session {
        self.view.read().expect("view lock").session.clone()
    }
}

/// Appends through one slot while its writer lock is held.
struct SlotSink<'a> {
    slot: &'a Slot,
    writer: &'a mut Writer,
    store: &'a SessionStore,
    clock: &'a dyn Clock,
}

impl SlotSink<'_> {
    fn persist(&mut self, body: EventBody) -> Result<SessionEvent, ServiceError> {
        let (event, next) = self.writer.log.prepare(body, self.clock.now())?;
        self.writer.file.append(&event)?;
        self.writer.log.commit(event.clone(), next.clone());
        {
            let mut view = self.slot.view.write().expect("view lock");
            view.events.push(event.clone());
            view.session = next;
        }
        let _ = self.slot.feed.send(event.clone());
        Ok(event)
    }
}

impl EventSink for SlotSink<'_> {
    fn session(&self) -> &Session {
        self.writer.log.session().expect("non-empty log")
    }

    fn append(&mut self, body: EventBody) -> Result<SessionEvent, OrchestratorError> {
        self.persist(body).map_err(|e| match e {
            ServiceError::Domain(d) => OrchestratorError::Domain(d),
            other => OrchestratorError::Sink(other.to_string()),
        })
    }

    fn note_intent(&mut self, key: &str) -> Result<(), OrchestratorError> {
        let record = IntentRecord {
            key: key.to_owned(),
            at: self.clock.now(),
        };
        self.store
            .record_intent(&self.slot.id, &record)
            .map_err(|e| OrchestratorError::Sink(e.to_string()))
    }
}

pub struct SessionService {
    config: ServiceConfig,
    gateway: Gateway,
    store: SessionStore,
    questions: RwLock<QuestionBank>,
    tokens: TokenSigner,
    clock: Arc<dyn Clock>,
    sessions: RwLock<HashMap<SessionId, Arc<Slot>>>,
}

impl std::fmt::Debug for SessionService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionService")
            .field("data_dir", &self.config.data_dir)
            .finish_non_exhaustive()
    }
}

impl SessionService {
    /// Opens the data directory and loads every stored session. Logs that
    /// fail to replay are skipped with an error message.
    pub fn open(config: ServiceConfig, gateway: Gateway) -> Result<Self, ServiceError> {
        Self::open_with_clock(config, gateway, Arc::new(SystemClock))
    }

    pub fn open_with_clock(config: ServiceConfig, gateway: Gateway, clock: Arc<dyn Clock>) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(&config.data_dir)?;
        let store = SessionStore::open(&config.data_dir)?;
        let tokens = TokenSigner::load_or_create(&config.data_dir.join("token.key"))?;
        let questions = QuestionBank::load_with_extra(&config.data_dir.join("questions.json"))?;
        let mut sessions = HashMap::new();
        for id in store.list()? {
            let loaded = store
                .open_existing(&id)
                .map_err(|e| e.to_string())
                .and_then(|(events, file)| {
                    SessionLog::from_events(events)
                        .map(|log| (log, file))
                        .map_err(|e| e.to_string())
                });
            match loaded {
                Ok((log, file)) => {
                    sessions.insert(id.clone(), Arc::new(Slot::new(id, log, file)));
                }
                Err(e) => error!(session = %id, error = %e, "skipping unreadable session log"),
            }
        }
        info!(sessions = sessions.len(), dir = %config.data_dir.display(), "session store opened");
        Ok(Self {
            config,
            gateway,
            store,
            questions: RwLock::new(questions),
            tokens,
            clock,
            sessions: RwLock::new(sessions),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn questions(&self) -> Vec<Question> {
        self.questions.read().expect("questions lock").all().to_vec()
    }

    pub fn add_question(&self, question: Question) -> Result<(), ServiceError> {
        let mut bank = self.questions.write().expect("questions lock");
        bank.add(question)?;
        bank.save_extra(&self.config.data_dir.join("questions.json"))?;
        Ok(())
    }

    fn slot(&self, id: &SessionId) -> Result<Arc<Slot>, ServiceError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(id.clone()))
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<_> = self.sessions.read().expect("sessions lock").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn pick_provider(&self) -> Result<String, ServiceError> {
        let mut usage: BTreeMap<&str, usize> = self
            .gateway
            .provider_ids()
            .filter(|id| self.gateway.is_available(id))
            .map(|id| (id, 0))
            .collect();
        for slot in self.sessions.read().expect("sessions lock").values() {
            let provider = slot.session().llm_provider_id;
            if let Some(n) = usage.get_mut(provider.as_str()) {
                *n += 1;
            }
        }
        usage
            .into_iter()
            .min_by_key(|&(id, n)| (n, id))
            .map(|(id, _)| id.to_owned())
            .ok_or(ServiceError::NoProviderAvailable)
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionId, ServiceError> {
        self.create_session_with_id(SessionId::new(uuid::Uuid::new_v4().simple().to_string()), req)
    }

    pub fn create_session_with_id(&self, id: SessionId, req: CreateSession) -> Result<SessionId, ServiceError> {
        if !valid_session_id(id.as_str()) {
            return Err(ServiceError::Storage(format!("invalid session id {id:?}")));
        }
        let question = self
            .questions
            .read()
            .expect("questions lock")
            .get(&req.question_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownQuestion(req.question_id.clone()))?;
        let provider = match req.llm_provider_id {
            Some(p) if self.gateway.has_provider(&p) => p,
            Some(p) => return Err(ServiceError::UnknownProvider(p)),
            None => self.pick_provider()?,
        };
        let (min, max) = (self.config.min_participants, self.config.max_participants);
        if !(min..=max).contains(&req.expected_participants) {
            return Err(ServiceError::InvalidParticipantCount {
                min,
                max,
                got: req.expected_participants,
            });
        }
        let max_iterations = req.max_iterations.unwrap_or(self.config.default_max_iterations);
        if max_iterations == 0 {
            return Err(ServiceError::InvalidMaxIterations);
        }

        let mut log = SessionLog::new();
        let body = EventBody::created(id.clone(), question, provider, max_iterations, req.expected_participants);
        let (event, next) = log.prepare(body, self.clock.now())?;
        let mut sessions = self.sessions.write().expect("sessions lock");
        if sessions.contains_key(&id) {
            return Err(ServiceError::Storage(format!("session {id} already exists")));
        }
        let mut file = self.store.create(&id)?;
        file.append(&event)?;
        log.commit(event, next);
        sessions.insert(id.clone(), Arc::new(Slot::new(id.clone(), log, file)));
        info!(session = %id, "session created");
        Ok(id)
    }

    /// Runs `f` with exclusive write access to one session, then lets the
    /// facilitator advance it.
    fn mutate<F>(&self, id: &SessionId, f: F) -> Result<Ack, ServiceError>
    where
        F: FnOnce(&Session) -> Result<EventBody, ServiceError>,
    {
        let slot = self.slot(id)?;
        let mut writer = slot.writer.lock().expect("writer lock");
        let mut sink = SlotSink {
            slot: &slot,
            writer: &mut writer,
            store: &self.store,
            clock: self.clock.as_ref(),
        };
        let body = f(EventSink::session(&sink))?;
        let event = sink.persist(body)?;
        let facilitator_error = advance(&mut sink, &self.gateway).err().map(|e| {
            warn!(session = %id, error = %e, "facilitator step failed");
            e.to_string()
        });
        Ok(Ack {
            sequence_no: event.sequence_no,
            phase: EventSink::session(&sink).phase,
            facilitator_error,
        })
    }

    pub fn join(&self, id: &SessionId, display_name: Option<String>) -> Result<JoinTicket, ServiceError> {
        let mut pid = None;
        self.mutate(id, |s| {
            if s.is_terminal() {
                return Err(ServiceError::WrongPhase(s.phase));
            }
            if s.participants.len() as u32 >= s.expected_participants {
                return Err(ServiceError::SessionFull);
            }
            let n = s.participants.len() + 1;
            let id = format!("p{n}");
            let name = display_name
                .map(|d| d.trim().to_owned())
                .filter(|d| !d.is_empty())
                .unwrap_or_else(|| format!("Participant {n}"));
            pid = Some(ParticipantId::new(id.clone()));
            Ok(EventBody::joined(id, name))
        })?;
        let participant_id = pid.expect("set on success");
        Ok(JoinTicket {
            token: self.tokens.issue(id, &participant_id),
            participant_id,
        })
    }

    pub fn authenticate(&self, id: &SessionId, token: &str) -> Result<ParticipantId, ServiceError> {
        let pid = self.tokens.verify(id, token).ok_or(ServiceError::InvalidToken)?;
        let session = self.slot(id)?.session();
        session.participant(&pid).ok_or(ServiceError::InvalidToken)?;
        Ok(pid)
    }

    pub fn submit_opinion(&self, id: &SessionId, participant: &ParticipantId, text: &str) -> Result<Ack, ServiceError> {
        let text = text.trim();
        self.mutate(id, |s| {
            s.participant(participant)
                .ok_or_else(|| ServiceError::UnknownParticipant(participant.clone()))?;
            if s.phase != Phase::CollectingOpinions {
                return Err(ServiceError::WrongPhase(s.phase));
            }
            if s.opinion_of(participant).is_some() {
                return Err(ServiceError::DuplicateOpinion(participant.clone()));
            }
            if text.is_empty() {
                return Err(ServiceError::EmptyText);
            }
            Ok(EventBody::opinion(participant.as_str(), text))
        })
    }

    pub fn submit_verdict(&self, id: &SessionId, participant: &ParticipantId, accept: bool) -> Result<Ack, ServiceError> {
        self.mutate(id, |s| {
            s.participant(participant)
                .ok_or_else(|| ServiceError::UnknownParticipant(participant.clone()))?;
            if s.phase != Phase::AwaitingVerdicts {
                return Err(ServiceError::WrongPhase(s.phase));
            }
            let it = s.current_iteration().expect("awaiting verdicts on a proposal");
            if it.verdict_of(participant).is_some() {
                return Err(ServiceError::DuplicateVerdict(participant.clone()));
            }
            Ok(EventBody::verdict(participant.as_str(), it.index(), accept))
        })
    }

    pub fn submit_feedback(&self, id: &SessionId, participant: &ParticipantId, text: &str) -> Result<Ack, ServiceError> {
        let text = text.trim();
        self.mutate(id, |s| {
            s.participant(participant)
                .ok_or_else(|| ServiceError::UnknownParticipant(participant.clone()))?;
            if s.phase != Phase::CollectingFeedback {
                return Err(ServiceError::WrongPhase(s.phase));
            }
            let it = s.current_iteration().expect("feedback on a proposal");
            if !it.verdict_of(participant).is_some_and(|v| !v.accept) {
                return Err(ServiceError::NotARejector(participant.clone()));
            }
            if it.feedback_of(participant).is_some() {
                return Err(ServiceError::DuplicateFeedback(participant.clone()));
            }
            if text.is_empty() {
                return Err(ServiceError::EmptyText);
            }
            Ok(EventBody::feedback(participant.as_str(), it.index(), text))
        })
    }

    pub fn session(&self, id: &SessionId) -> Result<Session, ServiceError> {
        Ok(self.slot(id)?.session())
    }

    pub fn snapshot(&self, id: &SessionId) -> Result<SessionSnapshot, ServiceError> {
        let session = self.session(id)?;
        let pending_actions = session
            .participants
            .iter()
            .map(|p| (p.id.clone(), pending_action(&session, &p.id)))
            .collect();
        Ok(SessionSnapshot {
            next_step: step(&session).kind,
            pending_actions,
            session,
        })
    }

    /// Persisted events with `sequence_no > since`.
    pub fn events_since(&self, id: &SessionId, since: u64) -> Result<Vec<SessionEvent>, ServiceError> {
        let slot = self.slot(id)?;
        let view = slot.view.read().expect("view lock");
        Ok(view.events.iter().filter(|e| e.sequence_no > since).cloned().collect())
    }

    /// Backlog after `since` followed by live events, without gaps or
    /// repeats. Ends after the session's final event.
    pub fn subscribe(&self, id: &SessionId, since: u64) -> Result<EventStream, ServiceError> {
        let slot = self.slot(id)?;
        let rx = slot.feed.subscribe();
        let (pending, done) = {
            let view = slot.view.read().expect("view lock");
            let pending: VecDeque<_> = view.events.iter().filter(|e| e.sequence_no > since).cloned().collect();
            let done = pending.is_empty() && view.events.last().is_some_and(is_final);
            (pending, done)
        };
        Ok(EventStream {
            slot,
            rx,
            pending,
            last: since,
            done,
        })
    }

    /// Ends sessions whose participants have been idle past the configured
    /// timeout. Returns the ids of sessions ended.
    pub fn expire_idle(&self) -> Vec<SessionId> {
        let now = self.clock.now();
        let mut ended = Vec::new();
        let slots: Vec<_> = self.sessions.read().expect("sessions lock").values().cloned().collect();
        for slot in slots {
            let mut writer = slot.writer.lock().expect("writer lock");
            let s = writer.log.session().expect("non-empty log");
            let limit = match s.phase {
                Phase::AwaitingVerdicts => Some(self.config.timeouts.verdict()),
                Phase::CollectingFeedback => Some(self.config.timeouts.feedback()),
                Phase::CollectingOpinions => self.config.timeouts.opinion(),
                _ => None,
            };
            let Some(limit) = limit else { continue };
            let idle = (now - s.last_activity).to_std().unwrap_or_default();
            if idle <= limit {
                continue;
            }
            let body = EventBody::ended(EndReason::Timeout, s.iteration_count());
            let mut sink = SlotSink {
                slot: &slot,
                writer: &mut writer,
                store: &self.store,
                clock: self.clock.as_ref(),
            };
            match sink.persist(body) {
                Ok(_) => {
                    info!(session = %slot.id, "session timed out");
                    ended.push(slot.id.clone());
                }
                Err(e) => error!(session = %slot.id, error = %e, "cannot end idle session"),
            }
        }
        ended.sort();
        ended
    }

    /// Completes facilitator work left unfinished, e.g. by a restart or a
    /// failed model call. Returns the sessions that were advanced and any
    /// failures.
    pub fn resume_pending(&self) -> Vec<(SessionId, Result<usize, String>)> {
        let mut slots: Vec<_> = self.sessions.read().expect("sessions lock").values().cloned().collect();
        slots.sort_by(|a, b| a.id.cmp(&b.id));
        let mut out = Vec::new();
        for slot in slots {
            let needs_work = {
                let s = slot.session();
                let kind = step(&s).kind;
                kind.needs_model()
                    || (kind == DirectiveKind::AnnounceConsensus && !s.consensus_announced)
                    || (kind == DirectiveKind::AnnounceNoConsensus && s.phase == Phase::SelectingStrategy)
            };
            if !needs_work {
                continue;
            }
            let mut writer = slot.writer.lock().expect("writer lock");
            let mut sink = SlotSink {
                slot: &slot,
                writer: &mut writer,
                store: &self.store,
                clock: self.clock.as_ref(),
            };
            let result = advance(&mut sink, &self.gateway).map(|evs| evs.len()).map_err(|e| e.to_string());
            if let Err(e) = &result {
                warn!(session = %slot.id, error = %e, "resume failed");
            }
            out.push((slot.id.clone(), result));
        }
        out
    }

    /// Model calls started for a session, in order.
    pub fn intents(&self, id: &SessionId) -> Result<Vec<IntentRecord>, ServiceError> {
        self.slot(id)?;
        Ok(self.store.intents(id)?)
    }
}

fn is_final(e: &SessionEvent) -> bool {
    matches!(e.kind(), EventKind::ConsensusReached | EventKind::SessionEnded)
}

/// Ordered event feed for one subscriber.
pub struct EventStream {
    slot: Arc<Slot>,
    rx: broadcast::Receiver<SessionEvent>,
    pending: VecDeque<SessionEvent>,
    last: u64,
    done: bool,
}

impl EventStream {
    pub async fn next(&mut self) -> Option<SessionEvent> {
        loop {
            if self.done {
                return None;
            }
            if let Some(e) = self.pending.pop_front() {
                if e.sequence_no <= self.last {
                    continue;
                }
                self.last = e.sequence_no;
                self.done = is_final(&e);
                return Some(e);
            }
            match self.rx.recv().await {
                Ok(e) => self.pending.push_back(e),
                Err(broadcast::error::RecvError::Lagged(_)) => {
                    let view = self.slot.view.read().expect("view lock");
                    self.pending
                        .extend(view.events.iter().filter(|e| e.sequence_no > self.last).cloned());
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    }

    /// Sequence number of the last event returned.
    pub fn last_sequence_no(&self) -> u64 {
        self.last
    }
}

/// Builds a gateway from the config's provider list.
pub fn gateway_from_config(config: &ServiceConfig) -> Gateway {
    Gateway::builder().configs(&config.providers).build()
}

/// Opens a service for the config file at `path`.
pub fn open_from_file(path: &Path) -> Result<SessionService, Box<dyn std::error::Error + Send + Sync>> {
    let config = ServiceConfig::load(path)?;
    let gateway = gateway_from_config(&config);
    Ok(SessionService::open(config, gateway)?)
}

#[cfg(test)]
mod tests;

use chrono::{DateTime, Utc};

use super::{apply_event, replay, DomainError, EventBody, ReplayError, Session, SessionEvent};

/// In-memory event log paired with its folded state.
///
/// Appends are validated against the current state before they are
/// recorded, so the log never contains an event that fails to replay.
#[derive(Debug, Clone, Default)]
pub struct SessionLog {
    events: Vec<SessionEvent>,
    state: Option<Session>,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_events(events: Vec<SessionEvent>) -> Result<Self, ReplayError> {
        let state = replay(&events)?;
        Ok(Self {
            events,
            state: Some(state),
        })
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn session(&self) -> Option<&Session> {
        self.state.as_ref()
    }

    pub fn next_sequence_no(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    /// Builds the next event without recording it.
    pub fn prepare(&self, body: EventBody, timestamp: DateTime<Utc>) -> Result<(SessionEvent, Session), DomainError> {
        let event = SessionEvent {
            sequence_no: self.next_sequence_no(),
            timestamp,
            body,
        };
        let next = apply_event(self.state.as_ref(), &event)?;
        Ok((event, next))
    }

    /// Records an event previously produced by [`SessionLog::prepare`].
    pub fn commit(&mut self, event: SessionEvent, next: Session) {
        debug_assert_eq!(event.sequence_no, self.next_sequence_no());
        self.events.push(event);
        self.state = Some(next);
    }

    pub fn append(&mut self, body: EventBody, timestamp: DateTime<Utc>) -> Result<&SessionEvent, DomainError> {
        let (event, next) = self.prepare(body, timestamp)?;
        self.commit(event, next);
        Ok(self.events.last().expect("just pushed"))
    }

    pub fn into_events(self) -> Vec<SessionEvent> {
        self.events
    }
}

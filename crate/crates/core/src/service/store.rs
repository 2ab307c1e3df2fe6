use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::domain::transcript::{self, TranscriptError};
use crate::domain::{SessionEvent, SessionId};

/// One line of a session's intent journal: a model call about to be made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentRecord {
    pub key: String,
    pub at: DateTime<Utc>,
}

/// Flat-file event logs: `<root>/sessions/<id>.jsonl`, plus
/// `<id>.intents.jsonl` next to each.
#[derive(Debug, Clone)]
pub struct SessionStore {
    dir: PathBuf,
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl SessionStore {
    pub fn open(root: &Path) -> io::Result<Self> {
        let dir = root.join("sessions");
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, id: &SessionId) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    fn intents_path(&self, id: &SessionId) -> PathBuf {
        self.dir.join(format!("{id}.intents.jsonl"))
    }

    /// Session ids with a log file, sorted.
    pub fn list(&self) -> io::Result<Vec<SessionId>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let Some(name) = name.to_str() else { continue };
            if let Some(stem) = name.strip_suffix(".jsonl") {
                if !stem.ends_with(".intents") && valid_session_id(stem) {
                    ids.push(SessionId::new(stem));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    /// Creates the log for a new session. Fails if it already exists.
    pub fn create(&self, id: &SessionId) -> io::Result<LogWriter> {
        let file = OpenOptions::new().append(true).create_new(true).open(self.log_path(id))?;
        Ok(LogWriter { file })
    }

    /// Reads a session's events and reopens its log for appending.
    ///
    /// An unterminated final line is what a crash mid-write leaves behind;
    /// it is cut off and the log is truncated to the last complete event.
    pub fn open_existing(&self, id: &SessionId) -> Result<(Vec<SessionEvent>, LogWriter), TranscriptError> {
        let path = self.log_path(id);
        let text = fs::read_to_string(&path)?;
        let complete = match text.rfind('\n') {
            Some(i) => &text[..=i],
            None => "",
        };
        if complete.len() != text.len() {
            warn!(session = %id, dropped = text.len() - complete.len(), "truncating torn final line");
            let f = OpenOptions::new().write(true).open(&path)?;
            f.set_len(complete.len() as u64)?;
            f.sync_all()?;
        }
        let events = transcript::parse_str(complete)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok((events, LogWriter { file }))
    }

    pub fn record_intent(&self, id: &SessionId, record: &IntentRecord) -> io::Result<()> {
        let mut f = OpenOptions::new().append(true).create(true).open(self.intents_path(id))?;
        let mut line = serde_json::to_string(record).map_err(io::Error::other)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()
    }

    pub fn intents(&self, id: &SessionId) -> io::Result<Vec<IntentRecord>> {
        let text = match fs::read_to_string(self.intents_path(id)) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        Ok(text
            .lines()
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect())
    }
}

/// Append handle for one session log. Every event is flushed to disk
/// before `append` returns.
#[derive(Debug)]
pub struct LogWriter {
    file: File,
}

impl LogWriter {
    pub fn append(&mut self, event: &SessionEvent) -> io::Result<()> {
        let mut line = transcript::event_to_line(event);
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()
    }
}

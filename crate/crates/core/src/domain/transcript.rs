//! Line-delimited JSON transcripts: one [`SessionEvent`] per line.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use super::{replay, ReplayError, Session, SessionEvent};

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("transcript is empty")]
    Empty,
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl TranscriptError {
    /// 1-based line number of the first bad line, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            TranscriptError::Parse { line, .. } => Some(*line),
            TranscriptError::Replay(e) => e.sequence_no().map(|s| s as usize),
            _ => None,
        }
    }
}

pub fn event_to_line(event: &SessionEvent) -> String {
    serde_json::to_string(event).expect("session events always serialize")
}

pub fn write_events<W: Write>(mut out: W, events: &[SessionEvent]) -> io::Result<()> {
    for event in events {
        out.write_all(event_to_line(event).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_string(events: &[SessionEvent]) -> String {
    let mut buf = Vec::new();
    write_events(&mut buf, events).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Parses events, skipping blank lines. Does not check event ordering.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<SessionEvent>, TranscriptError> {
    let mut events = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|e| TranscriptError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        events.push(event);
    }
    if events.is_empty() {
        return Err(TranscriptError::Empty);
    }
    Ok(events)
}

pub fn parse_str(text: &str) -> Result<Vec<SessionEvent>, TranscriptError> {
    read_events(text.as_bytes())
}

/// Reads and replays a transcript file.
pub fn load(path: &Path) -> Result<(Vec<SessionEvent>, Session), TranscriptError> {
    let events = read_events(BufReader::new(File::open(path)?))?;
    let session = replay(&events)?;
    Ok((events, session))
}

pub fn save(path: &Path, events: &[SessionEvent]) -> io::Result<()> {
    let file = File::create(path)?;
    write_events(io::BufWriter::new(file), events)
}

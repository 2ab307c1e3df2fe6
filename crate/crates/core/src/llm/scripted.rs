use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{BackendCall, BackendError, BackendReply, LlmBackend, RequestKind};

/// One canned answer. More specific keys win: a `history_hash` match beats
/// an `iteration` match, which beats a bare `kind` entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub kind: RequestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_hash: Option<String>,
    pub text: String,
}

#[derive(Debug, Default, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    use_defaults: bool,
    #[serde(default)]
    responses: Vec<ScriptedResponse>,
}

/// Deterministic stand-in for a remote model.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    responses: Vec<ScriptedResponse>,
    use_defaults: bool,
    calls: AtomicU64,
}

impl ScriptedProvider {
    pub fn new(responses: Vec<ScriptedResponse>) -> Self {
        Self {
            responses,
            use_defaults: false,
            calls: AtomicU64::new(0),
        }
    }

    /// Answers every request with generated text derived from the request.
    pub fn with_defaults() -> Self {
        Self {
            use_defaults: true,
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
        let file: ScriptFile = toml::from_str(&text).map_err(|e| e.to_string())?;
        Ok(Self {
            responses: file.responses,
            use_defaults: file.use_defaults,
            calls: AtomicU64::new(0),
        })
    }

    pub fn respond(mut self, kind: RequestKind, iteration: Option<u32>, text: impl Into<String>) -> Self {
        self.responses.push(ScriptedResponse {
            kind,
            iteration,
            history_hash: None,
            text: text.into(),
        });
        self
    }

    pub fn respond_to_history(mut self, kind: RequestKind, history_hash: impl Into<String>, text: impl Into<String>) -> Self {
        self.responses.push(ScriptedResponse {
            kind,
            iteration: None,
            history_hash: Some(history_hash.into()),
            text: text.into(),
        });
        self
    }

    pub fn fallback_to_defaults(mut self) -> Self {
        self.use_defaults = true;
        self
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, call: &BackendCall<'_>) -> Option<String> {
        let req = call.request;
        let same_kind = || self.responses.iter().filter(|r| r.kind == req.kind);
        let hash = req.history.content_hash();
        if let Some(r) = same_kind().find(|r| r.history_hash.as_deref() == Some(hash.as_str())) {
            return Some(r.text.clone());
        }
        let iteration = req.target_iteration();
        if let Some(r) = same_kind().find(|r| r.history_hash.is_none() && r.iteration == Some(iteration)) {
            return Some(r.text.clone());
        }
        if let Some(r) = same_kind().find(|r| r.history_hash.is_none() && r.iteration.is_none()) {
            return Some(r.text.clone());
        }
        self.use_defaults.then(|| default_text(call))
    }
}

fn default_text(call: &BackendCall<'_>) -> String {
    let req = call.request;
    let n = req.target_iteration();
    match (req.kind, req.strategy) {
        (RequestKind::SelectStrategy, _) => "SummarizeDiscussion".to_owned(),
        (RequestKind::ReviseWithStrategy, Some(s)) => {
            format!("Proposal {n} ({s}): {}", req.history.question)
        }
        _ => format!("Proposal {n}: {}", req.history.question),
    }
}

impl LlmBackend for ScriptedProvider {
    fn complete(&self, call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.lookup(call)
            .map(|text| BackendReply {
                text,
                raw_usage: None,
            })
            .ok_or_else(|| {
                BackendError::Fatal(format!(
                    "no scripted response for {:?} at iteration {}",
                    call.request.kind,
                    call.request.target_iteration()
                ))
            })
    }
}

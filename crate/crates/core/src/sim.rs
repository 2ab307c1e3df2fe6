//! Headless sessions driven by a declarative scenario: scripted
//! participants against a scripted provider, with a deterministic clock.

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::cosine_similarity;
use crate::clock::{Clock, SteppingClock};
use crate::domain::{
    transcript, DomainError, EventBody, ParticipantId, Phase, Question, Session, SessionEvent, SessionId,
    SessionLog,
};
use crate::embedding::{Embedder, HashingEncoder};
use crate::llm::{Gateway, RetryPolicy, ScriptedProvider, ScriptedResponse};
use crate::orchestrator::{advance, EventSink, OrchestratorError};
use crate::service::QuestionBank;

pub const DEFAULT_FEEDBACK: &str = "This proposal does not reflect my position.";

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario at `{path}`: {message}")]
    InvalidScenario { path: String, message: String },
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Orchestrator(#[from] OrchestratorError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> SimError {
    SimError::InvalidScenario {
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// How a scripted participant votes on one proposal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VerdictPolicy {
    Fixed(Decision),
    /// Accept when the proposal's cosine similarity to the participant's
    /// opinion, under the local encoder, is at least this value.
    Threshold { accept_if_similarity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioParticipant {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub name: Option<String>,
    pub opinion: String,
    /// Policy for iteration `k` is entry `k - 1`; the last entry repeats.
    pub verdicts: Vec<VerdictPolicy>,
    /// Feedback for the `k`-th rejection; the last entry repeats.
    #[serde(default)]
    pub feedback: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub session_id: Option<String>,
    /// A question from the builtin bank.
    #[serde(default)]
    pub question_id: Option<String>,
    /// An inline question, used instead of `question_id`.
    #[serde(default)]
    pub question: Option<Question>,
    #[serde(default = "default_provider")]
    pub provider_id: String,
    #[serde(default = "default_cap")]
    pub max_iterations: u32,
    #[serde(default)]
    pub seed: u64,
    /// Shuffle the order in which participants act, using `seed`.
    #[serde(default)]
    pub shuffle: bool,
    #[serde(default = "default_start")]
    pub start: DateTime<Utc>,
    #[serde(default = "default_step")]
    pub step_ms: i64,
    #[serde(default = "default_dimension")]
    pub similarity_dimension: usize,
    pub participants: Vec<ScenarioParticipant>,
    /// Answer generated text for requests the table does not cover.
    #[serde(default)]
    pub use_default_responses: bool,
    #[serde(default)]
    pub responses: Vec<ScriptedResponse>,
}

fn default_provider() -> String {
    "scripted".to_owned()
}

fn default_cap() -> u32 {
    5
}

fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

fn default_step() -> i64 {
    1000
}

fn default_dimension() -> usize {
    256
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let de = toml::Deserializer::new(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(path, e.into_inner().message().trim().to_owned())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if let Some(id) = &self.session_id {
            if !crate::service::valid_session_id(id) {
                return Err(invalid("session_id", "use letters, digits, '-' or '_'"));
            }
        }
        match (&self.question_id, &self.question) {
            (Some(_), Some(_)) => return Err(invalid("question", "give question_id or question, not both")),
            (None, None) => return Err(invalid("question_id", "missing")),
            (Some(id), None) if QuestionBank::builtin().get(&id.as_str().into()).is_none() => {
                return Err(invalid("question_id", format!("unknown question {id}")))
            }
            (None, Some(q)) => q.validate().map_err(|e| invalid("question.text", e.to_string()))?,
            _ => {}
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations", "must be at least 1"));
        }
        if self.step_ms < 0 {
            return Err(invalid("step_ms", "must not be negative"));
        }
        if self.similarity_dimension < 2 {
            return Err(invalid("similarity_dimension", "must be at least 2"));
        }
        if !(2..=8).contains(&self.participants.len()) {
            return Err(invalid("participants", format!("need 2..=8 participants, got {}", self.participants.len())));
        }
        let mut ids = std::collections::HashSet::new();
        for (i, p) in self.participants.iter().enumerate() {
            let at = |field: &str| format!("participants[{i}].{field}");
            if p.opinion.trim().is_empty() {
                return Err(invalid(at("opinion"), "must not be empty"));
            }
            if p.verdicts.is_empty() {
                return Err(invalid(at("verdicts"), "at least one verdict policy is required"));
            }
            for (j, v) in p.verdicts.iter().enumerate() {
                if let VerdictPolicy::Threshold { accept_if_similarity: t } = v {
                    if !(-1.0..=1.0).contains(t) {
                        return Err(invalid(
                            format!("participants[{i}].verdicts[{j}].accept_if_similarity"),
                            "must lie in [-1, 1]",
                        ));
                    }
                }
            }
            if let Some(j) = p.feedback.iter().position(|f| f.trim().is_empty()) {
                return Err(invalid(format!("participants[{i}].feedback[{j}]"), "must not be empty"));
            }
            if !ids.insert(self.participant_id(i)) {
                return Err(invalid(at("id"), "duplicate participant id"));
            }
        }
        for (i, r) in self.responses.iter().enumerate() {
            if r.text.trim().is_empty() {
                return Err(invalid(format!("responses[{i}].text"), "must not be empty"));
            }
        }
        Ok(())
    }

    fn participant_id(&self, i: usize) -> String {
        self.participants[i].id.clone().unwrap_or_else(|| format!("p{}", i + 1))
    }

    fn question(&self) -> Question {
        match (&self.question, &self.question_id) {
            (Some(q), _) => q.clone(),
            (None, Some(id)) => QuestionBank::builtin()
                .get(&id.as_str().into())
                .cloned()
                .expect("validated"),
            (None, None) => unreachable!("validated"),
        }
    }

    fn session_id(&self) -> SessionId {
        let id = self.session_id.clone().unwrap_or_else(|| {
            self.name
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
                .collect()
        });
        SessionId::new(id)
    }

    fn provider(&self) -> ScriptedProvider {
        let p = ScriptedProvider::new(self.responses.clone());
        if self.use_default_responses {
            p.fallback_to_defaults()
        } else {
            p
        }
    }
}

struct MemorySink<'a> {
    log: SessionLog,
    clock: &'a dyn Clock,
}

impl EventSink for MemorySink<'_> {
    fn session(&self) -> &Session {
        self.log.session().expect("created first")
    }

    fn append(&mut self, body: EventBody) -> Result<SessionEvent, OrchestratorError> {
        Ok(self.log.append(body, self.clock.now())?.clone())
    }
}

impl MemorySink<'_> {
    fn human(&mut self, body: EventBody, gateway: &Gateway) -> Result<(), SimError> {
        self.log.append(body, self.clock.now())?;
        advance(self, gateway)?;
        Ok(())
    }
}

fn pick<T: Clone>(items: &[T], k: u32) -> Option<T> {
    let i = (k as usize).saturating_sub(1).min(items.len().checked_sub(1)?);
    Some(items[i].clone())
}

/// Runs the scenario to completion and returns the transcript events.
pub fn run(scenario: &Scenario) -> Result<Vec<SessionEvent>, SimError> {
    scenario.validate()?;
    let clock = SteppingClock::new(scenario.start, scenario.step_ms);
    let gateway = Gateway::builder()
        .backend(
            scenario.provider_id.clone(),
            Arc::new(scenario.provider()),
            RetryPolicy {
                retry_budget: 0,
                ..RetryPolicy::default()
            },
        )
        .build();
    let encoder = HashingEncoder::new(scenario.similarity_dimension);
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut order: Vec<usize> = (0..scenario.participants.len()).collect();
    let mut reorder = |order: &mut Vec<usize>| {
        if scenario.shuffle {
            order.shuffle(&mut rng);
        }
    };

    let mut sink = MemorySink {
        log: SessionLog::new(),
        clock: &clock,
    };
    sink.log.append(
        EventBody::created(
            scenario.session_id(),
            scenario.question(),
            scenario.provider_id.clone(),
            scenario.max_iterations,
            scenario.participants.len() as u32,
        ),
        clock.now(),
    )?;
    for (i, p) in scenario.participants.iter().enumerate() {
        let name = p.name.clone().unwrap_or_else(|| format!("Participant {}", i + 1));
        sink.log.append(EventBody::joined(scenario.participant_id(i), name), clock.now())?;
    }
    reorder(&mut order);
    for &i in &order {
        let body = EventBody::opinion(scenario.participant_id(i), scenario.participants[i].opinion.trim());
        sink.human(body, &gateway)?;
    }

    let mut rejections = vec![0u32; scenario.participants.len()];
    loop {
        let session = sink.session().clone();
        match session.phase {
            Phase::AwaitingVerdicts => {
                let it = session.current_iteration().expect("proposal issued");
                let k = it.index();
                reorder(&mut order);
                for &i in &order {
                    let p = &scenario.participants[i];
                    let accept = match pick(&p.verdicts, k).expect("validated non-empty") {
                        VerdictPolicy::Fixed(d) => d == Decision::Accept,
                        VerdictPolicy::Threshold { accept_if_similarity } => {
                            let a = encoder.embed(&p.opinion).map_err(|e| invalid(format!("participants[{i}].opinion"), e.to_string()))?;
                            let b = encoder.embed(&it.proposal.text).map_err(|e| invalid("responses", e.to_string()))?;
                            cosine_similarity(&a, &b).unwrap_or(0.0) >= accept_if_similarity
                        }
                    };
                    sink.human(EventBody::verdict(scenario.participant_id(i), k, accept), &gateway)?;
                }
            }
            Phase::CollectingFeedback => {
                let it = session.current_iteration().expect("proposal issued");
                let rejectors: Vec<ParticipantId> = it.rejectors().cloned().collect();
                reorder(&mut order);
                for &i in &order {
                    let pid = scenario.participant_id(i);
                    if !rejectors.iter().any(|r| r.as_str() == pid) {
                        continue;
                    }
                    rejections[i] += 1;
                    let text = pick(&scenario.participants[i].feedback, rejections[i])
                        .unwrap_or_else(|| DEFAULT_FEEDBACK.to_owned());
                    sink.human(EventBody::feedback(pid, it.index(), text), &gateway)?;
                }
            }
            Phase::ConsensusReached | Phase::EndedNoConsensus => break,
            Phase::CollectingOpinions | Phase::Synthesizing | Phase::SelectingStrategy => {
                advance(&mut sink, &gateway)?;
                if sink.session().phase == session.phase && sink.session().last_sequence_no == session.last_sequence_no {
                    return Err(invalid("responses", format!("session stalled in {}", session.phase)));
                }
            }
        }
    }
    Ok(sink.log.into_events())
}

/// Runs a scenario and writes `<out>/<session id>.jsonl`.
pub fn run_to_dir(scenario: &Scenario, out: &Path) -> Result<std::path::PathBuf, SimError> {
    let events = run(scenario)?;
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{}.jsonl", scenario.session_id()));
    transcript::save(&path, &events)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{replay, EventKind};

    const BASE: &str = r#"
name = "t"
question_id = "Q1"
use_default_responses = true

[[participants]]
opinion = "More clinics in rural areas."
verdicts = ["accept"]

[[participants]]
opinion = "Cheaper medicine for everyone."
verdicts = ["accept"]
"#;

    fn count(events: &[SessionEvent], kind: EventKind) -> usize {
        events.iter().filter(|e| e.kind() == kind).count()
    }

    fn err_path(text: &str) -> String {
        match Scenario::from_toml_str(text) {
            Err(SimError::InvalidScenario { path, .. }) => path,
            other => panic!("expected invalid scenario, got {other:?}"),
        }
    }

    #[test]
    fn invalid_fields_are_located() {
        assert_eq!(err_path(&BASE.replace("verdicts = [\"accept\"]\n\n[[p", "verdicts = [\"maybe\"]\n\n[[p")), "participants[0].verdicts[0]");
        assert_eq!(err_path(&format!("{BASE}\nbogus = 1\n").replacen("name = \"t\"", "name = \"t\"\nextra = 2", 1)), "extra");
        assert_eq!(err_path(&BASE.replace("question_id = \"Q1\"", "question_id = \"Q9\"")), "question_id");
        assert_eq!(err_path(&BASE.replace("question_id = \"Q1\"", "max_iterations = 0\nquestion_id = \"Q1\"")), "max_iterations");
        let threshold = BASE.replacen("verdicts = [\"accept\"]", "verdicts = [\"accept\", { accept_if_similarity = 2.0 }]", 1);
        assert_eq!(err_path(&threshold), "participants[0].verdicts[1].accept_if_similarity");
        let one = BASE.rsplit_once("[[participants]]").unwrap().0;
        assert_eq!(err_path(one), "participants");
    }

    #[test]
    fn accept_first() {
        let events = run(&Scenario::from_toml_str(BASE).unwrap()).unwrap();
        let session = replay(&events).unwrap();
        assert_eq!(session.phase, Phase::ConsensusReached);
        assert_eq!(session.consensus_iteration(), Some(1));
        assert_eq!(count(&events, EventKind::ProposalIssued), 1);
        assert_eq!(count(&events, EventKind::StrategySelected), 0);
    }

    #[test]
    fn reject_until_cap() {
        let text = BASE.replacen("verdicts = [\"accept\"]", "verdicts = [\"reject\"]", 1);
        let events = run(&Scenario::from_toml_str(&text).unwrap()).unwrap();
        let session = replay(&events).unwrap();
        assert_eq!(session.phase, Phase::EndedNoConsensus);
        assert_eq!(count(&events, EventKind::ProposalIssued), 5);
        assert_eq!(count(&events, EventKind::StrategySelected), 4);
        assert_eq!(count(&events, EventKind::FeedbackPosted), 5);
        assert_eq!(count(&events, EventKind::SessionEnded), 1);
        let fb = &session.iterations[4].feedbacks[0];
        assert_eq!(fb.text, DEFAULT_FEEDBACK);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let text = BASE
            .replacen("verdicts = [\"accept\"]", "verdicts = [\"reject\", \"accept\"]", 1)
            .replace("name = \"t\"", "name = \"t\"\nshuffle = true\nseed = 3");
        let s = Scenario::from_toml_str(&text).unwrap();
        let a = transcript::to_string(&run(&s).unwrap());
        let b = transcript::to_string(&run(&s).unwrap());
        assert_eq!(a, b);
        let orders: std::collections::HashSet<String> = (0..16)
            .map(|seed| {
                let mut s = s.clone();
                s.seed = seed;
                let events = run(&s).unwrap();
                replay(&events).unwrap().opinions.iter().map(|o| o.participant_id.to_string()).collect()
            })
            .collect();
        assert_eq!(orders.len(), 2);
    }

    #[test]
    fn threshold_policy_uses_local_similarity() {
        let text = r#"
name = "th"
question_id = "Q2"

[[participants]]
opinion = "Vaccinate every child."
verdicts = [{ accept_if_similarity = 0.99 }]

[[participants]]
opinion = "Train more nurses."
verdicts = ["accept"]

[[responses]]
kind = "SynthesizeInitial"
iteration = 1
text = "Fund nurses."

[[responses]]
kind = "SelectStrategy"
text = "ReframeQuestion"

[[responses]]
kind = "ReviseWithStrategy"
text = "vaccinate EVERY child."
"#;
        let events = run(&Scenario::from_toml_str(text).unwrap()).unwrap();
        let session = replay(&events).unwrap();
        assert_eq!(session.consensus_iteration(), Some(2));
        assert_eq!(session.iterations[1].proposal.strategy_used, Some(crate::domain::Strategy::ReframeQuestion));
    }

    #[test]
    fn missing_response_is_an_error() {
        let text = BASE.replace("use_default_responses = true", "");
        assert!(matches!(run(&Scenario::from_toml_str(&text).unwrap()), Err(SimError::Orchestrator(_))));
    }
}

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use super::*;
use crate::engine::HistoryItem;

fn history() -> ConversationHistory {
    ConversationHistory {
        question: "Should cities ban cars downtown?".into(),
        items: vec![
            HistoryItem::Opinion {
                participant_id: "p1".into(),
                display_name: "Ann".into(),
                text: "Yes, for cleaner air.".into(),
            },
            HistoryItem::Opinion {
                participant_id: "p2".into(),
                display_name: "Bo".into(),
                text: "No, shops will suffer.".into(),
            },
            HistoryItem::Proposal {
                iteration_index: 1,
                text: "Ban cars on weekends.".into(),
                strategy_used: None,
            },
            HistoryItem::Verdict {
                participant_id: "p1".into(),
                display_name: "Ann".into(),
                iteration_index: 1,
                accept: true,
            },
            HistoryItem::Verdict {
                participant_id: "p2".into(),
                display_name: "Bo".into(),
                iteration_index: 1,
                accept: false,
            },
            HistoryItem::Feedback {
                participant_id: "p2".into(),
                display_name: "Bo".into(),
                iteration_index: 1,
                text: "Weekends are peak shopping time.".into(),
            },
        ],
    }
}

const TABLE_SENTENCES: [(Strategy, &str); 5] = [
    (
        Strategy::ClarifyUnderstanding,
        "Provide additional explanations, definitions, or examples to eliminate misunderstandings or ambiguities related to the research question or discussion points.",
    ),
    (
        Strategy::SummarizeDiscussion,
        "Provide a concise summary of the discussion, highlighting key points of agreement and disagreement.",
    ),
    (
        Strategy::HighlightCommonGround,
        "Identify and emphasize points of agreement among participants.",
    ),
    (
        Strategy::ProposeCompromise,
        "Suggest potential compromises or middle-ground solutions.",
    ),
    (
        Strategy::ReframeQuestion,
        "Rephrase or adjust the focus of the research question to make it more agreeable or clearer.",
    ),
];

#[test]
fn each_strategy_template_carries_its_sentence_verbatim() {
    let templates = PromptTemplates::builtin();
    for (strategy, sentence) in TABLE_SENTENCES {
        assert_eq!(templates.strategy_prompt(strategy), sentence);
        let text = render_prompt(&GenerationRequest::revise(history(), strategy, "x"));
        assert!(text.contains(sentence), "{strategy} prompt missing from rendered text");
    }
}

#[test]
fn render_examples() {
    let text = render_prompt(&GenerationRequest::revise(history(), Strategy::ProposeCompromise, "x"));
    assert!(text.contains("Suggest potential compromises or middle-ground solutions."));
    let text = render_prompt(&GenerationRequest::revise(history(), Strategy::ClarifyUnderstanding, "x"));
    assert!(text.contains("Provide additional explanations, definitions, or examples"));
    assert!(text.contains("revised consensus proposal number 2"));
}

#[test]
fn render_is_deterministic_and_chronological() {
    let req = GenerationRequest::synthesize(history(), "x");
    let a = render_prompt(&req);
    assert_eq!(a, render_prompt(&req));
    let positions: Vec<usize> = [
        "Should cities ban cars downtown?",
        "Opinion from Ann: Yes, for cleaner air.",
        "Opinion from Bo: No, shops will suffer.",
        "Proposal 1: Ban cars on weekends.",
        "Bo rejected proposal 1.",
        "Feedback from Bo on proposal 1: Weekends are peak shopping time.",
    ]
    .iter()
    .map(|needle| a.find(needle).unwrap_or_else(|| panic!("missing {needle:?}")))
    .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn selection_prompt_lists_all_names_and_asks_for_one() {
    let text = render_prompt(&GenerationRequest::select_strategy(history(), "x"));
    for s in Strategy::ALL {
        assert!(text.contains(s.name()));
    }
    assert!(text.contains("exactly one strategy name"));
}

#[test]
fn history_truncation_drops_oldest_feedback_first() {
    let mut h = history();
    h.items.push(HistoryItem::Feedback {
        participant_id: "p1".into(),
        display_name: "Ann".into(),
        iteration_index: 1,
        text: "newer feedback".into(),
    });
    let full = prompt::render_history(&h, usize::MAX);
    let budget = full.chars().count() - 5;
    let cut = prompt::render_history(&h, budget);
    assert!(!cut.contains("Weekends are peak shopping time."));
    assert!(cut.contains("newer feedback"));
    assert!(cut.contains("Opinion from Ann"));
    // nothing left to drop: opinions are kept even over budget
    let tiny = prompt::render_history(&h, 1);
    assert!(tiny.contains("Opinion from Bo"));
    assert!(!tiny.contains("Feedback"));
}

#[test]
fn request_validation() {
    let mut req = GenerationRequest::synthesize(history(), "x");
    req.strategy = Some(Strategy::ReframeQuestion);
    assert!(req.validate().is_err());
    let mut req = GenerationRequest::revise(history(), Strategy::ReframeQuestion, "x");
    req.strategy = None;
    assert!(req.validate().is_err());
    let mut req = GenerationRequest::synthesize(history(), "x");
    req.decoding.temperature = -0.1;
    assert!(req.validate().is_err());
    assert_eq!(GenerationRequest::select_strategy(history(), "x").decoding.temperature, 0.0);
    assert_eq!(GenerationRequest::synthesize(history(), "x").decoding.temperature, 0.7);
}

fn fast_policy(retry_budget: u32) -> RetryPolicy {
    RetryPolicy {
        timeout: Duration::from_millis(500),
        retry_budget,
        backoff: Duration::from_millis(1),
    }
}

#[test]
fn scripted_provider_answers_by_history_hash() {
    let h = history();
    let provider = ScriptedProvider::new(vec![]).respond_to_history(
        RequestKind::SynthesizeInitial,
        h.content_hash(),
        "P1",
    );
    let gw = Gateway::builder()
        .backend("scripted", Arc::new(provider), fast_policy(0))
        .build();
    let resp = gw.generate(&GenerationRequest::synthesize(h, "scripted")).unwrap();
    assert_eq!(resp.text, "P1");
    assert_eq!(resp.provider_id, "scripted");
}

#[test]
fn scripted_provider_answers_strategy_selection() {
    let provider = ScriptedProvider::new(vec![]).respond(RequestKind::SelectStrategy, None, "ProposeCompromise");
    let gw = Gateway::builder()
        .backend("scripted", Arc::new(provider), fast_policy(0))
        .build();
    let resp = gw
        .generate(&GenerationRequest::select_strategy(history(), "scripted"))
        .unwrap();
    assert_eq!(resp.text, "ProposeCompromise");
}

#[test]
fn scripted_lookup_precedence() {
    let h = history();
    let provider = ScriptedProvider::new(vec![])
        .respond(RequestKind::ReviseWithStrategy, None, "generic")
        .respond(RequestKind::ReviseWithStrategy, Some(2), "second");
    let gw = Gateway::builder()
        .backend("s", Arc::new(provider), fast_policy(0))
        .build();
    let req = GenerationRequest::revise(h.clone(), Strategy::ReframeQuestion, "s");
    assert_eq!(gw.generate(&req).unwrap().text, "second");

    let strict = Gateway::builder()
        .backend("s", Arc::new(ScriptedProvider::new(vec![])), fast_policy(3))
        .build();
    let err = strict.generate(&req).unwrap_err();
    assert!(matches!(err, GatewayError::ProviderUnavailable { attempts: 1, .. }), "fatal errors are not retried");
}

struct Flaky {
    failures_before_success: u32,
    error: BackendError,
    calls: AtomicU32,
}

impl LlmBackend for Flaky {
    fn complete(&self, _call: &BackendCall<'_>) -> Result<BackendReply, BackendError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures_before_success {
            Err(self.error.clone())
        } else {
            Ok(BackendReply {
                text: "ok".into(),
                raw_usage: None,
            })
        }
    }
}

#[test]
fn transient_failures_are_retried_within_budget() {
    let flaky = Arc::new(Flaky {
        failures_before_success: 2,
        error: BackendError::Transient("503".into()),
        calls: AtomicU32::new(0),
    });
    let gw = Gateway::builder().backend("f", flaky.clone(), fast_policy(2)).build();
    let resp = gw.generate(&GenerationRequest::synthesize(history(), "f")).unwrap();
    assert_eq!(resp.attempts, 3);

    let flaky = Arc::new(Flaky {
        failures_before_success: 5,
        error: BackendError::Timeout,
        calls: AtomicU32::new(0),
    });
    let gw = Gateway::builder().backend("f", flaky.clone(), fast_policy(2)).build();
    let err = gw.generate(&GenerationRequest::synthesize(history(), "f")).unwrap_err();
    assert_eq!(err, GatewayError::Timeout { provider: "f".into(), attempts: 3 });
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
}

#[test]
fn blank_completion_is_an_error() {
    let provider = ScriptedProvider::new(vec![]).respond(RequestKind::SynthesizeInitial, None, "  \n");
    let gw = Gateway::builder().backend("s", Arc::new(provider), fast_policy(2)).build();
    assert_eq!(
        gw.generate(&GenerationRequest::synthesize(history(), "s")),
        Err(GatewayError::EmptyCompletion("s".into()))
    );
}

#[test]
fn unknown_and_unavailable_providers() {
    let gw = Gateway::builder().unavailable("gone", "no key").build();
    assert!(matches!(
        gw.generate(&GenerationRequest::synthesize(history(), "nope")),
        Err(GatewayError::UnknownProvider(_))
    ));
    assert!(matches!(
        gw.generate(&GenerationRequest::synthesize(history(), "gone")),
        Err(GatewayError::ProviderUnavailable { attempts: 0, .. })
    ));
    assert!(!gw.is_available("gone"));
}

#[test]
fn missing_credential_marks_provider_unavailable() {
    let mut config = ProviderConfig::chat_completion("remote", "http://127.0.0.1:9/v1", "m");
    config.credential_env = Some("FACILITATOR_TEST_SURELY_UNSET_KEY".into());
    let gw = Gateway::builder().configs(&[config]).build();
    assert!(gw.has_provider("remote"));
    assert!(!gw.is_available("remote"));
}

#[test]
fn unreachable_endpoint_gives_up_after_budget_plus_one_attempts() {
    // Reserve a port, then close it so connections are refused.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut config = ProviderConfig::chat_completion("remote", format!("http://127.0.0.1:{port}/v1"), "m");
    config.retry_budget = 2;
    config.backoff_ms = 1;
    config.timeout_ms = 2_000;
    let gw = Gateway::builder().configs(&[config]).build();
    let started = Instant::now();
    let err = gw.generate(&GenerationRequest::synthesize(history(), "remote")).unwrap_err();
    assert!(matches!(err, GatewayError::ProviderUnavailable { attempts: 3, .. }), "{err:?}");
    assert!(started.elapsed() <= Duration::from_millis(6_000));
}

/// One-shot HTTP server returning `body` and capturing the request.
fn serve_once(body: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut head = String::new();
        let mut content_length = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = v.trim().parse().unwrap();
            }
            head.push_str(&line);
            if line == "\r\n" {
                break;
            }
        }
        let mut payload = vec![0; content_length];
        reader.read_exact(&mut payload).unwrap();
        let mut stream = stream;
        write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{}",
            body.len(),
            body
        )
        .unwrap();
        head + &String::from_utf8(payload).unwrap()
    });
    (url, handle)
}

static ENV_LOCK: Mutex<()> = Mutex::new(());

#[test]
fn chat_completion_wire_shape() {
    let _guard = ENV_LOCK.lock().unwrap();
    let (url, handle) = serve_once(r#"{"choices":[{"message":{"content":"Meet halfway."}}],"usage":{"total_tokens":12}}"#);
    std::env::set_var("FACILITATOR_TEST_KEY", "sekret");
    let mut config = ProviderConfig::chat_completion("remote", url, "model-x");
    config.credential_env = Some("FACILITATOR_TEST_KEY".into());
    config.extra_body = Some(serde_json::json!({"safe_prompt": true}));
    let gw = Gateway::builder().configs(&[config]).build();
    let resp = gw
        .generate(&GenerationRequest::revise(history(), Strategy::ProposeCompromise, "remote"))
        .unwrap();
    assert_eq!(resp.text, "Meet halfway.");
    assert_eq!(resp.raw_usage.unwrap()["total_tokens"], 12);

    let request = handle.join().unwrap();
    assert!(request.contains("authorization: Bearer sekret") || request.contains("Authorization: Bearer sekret"));
    let body: serde_json::Value = serde_json::from_str(&request[request.find('{').unwrap()..]).unwrap();
    assert_eq!(body["model"], "model-x");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["role"], "user");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["safe_prompt"], true);
    assert!(body["messages"][1]["content"]
        .as_str()
        .unwrap()
        .contains("Suggest potential compromises or middle-ground solutions."));
}

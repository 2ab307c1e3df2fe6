//! HTTP JSON API and server-sent event feed.
//!
//! | route | body |
//! |---|---|
//! | `POST /sessions` | [`CreateSession`] |
//! | `POST /sessions/{id}/join` | `{"display_name"?}` |
//! | `POST /sessions/{id}/opinion` | `{"text"}` |
//! | `POST /sessions/{id}/verdict` | `{"accept"}` |
//! | `POST /sessions/{id}/feedback` | `{"text"}` |
//! | `GET /sessions/{id}` | |
//! | `GET /sessions/{id}/events?since=N` | |
//! | `GET /questions`, `POST /questions` | [`Question`] |
//!
//! Participant routes take the join token as `Authorization: Bearer <token>`.

use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;
use tracing::info;

use super::{CreateSession, ServiceError, SessionService};
use crate::domain::{EventBody, ParticipantId, Question, SessionEvent, SessionId};

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl ApiError {
    fn code(&self) -> (StatusCode, &'static str) {
        use ServiceError::*;
        match &self.0 {
            UnknownQuestion(_) => (StatusCode::NOT_FOUND, "UnknownQuestion"),
            UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            UnknownProvider(_) => (StatusCode::UNPROCESSABLE_ENTITY, "UnknownProvider"),
            NoProviderAvailable => (StatusCode::SERVICE_UNAVAILABLE, "NoProviderAvailable"),
            InvalidParticipantCount { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidParticipantCount"),
            InvalidMaxIterations => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidMaxIterations"),
            EmptyText => (StatusCode::UNPROCESSABLE_ENTITY, "EmptyText"),
            UnknownParticipant(_) => (StatusCode::FORBIDDEN, "UnknownParticipant"),
            InvalidToken => (StatusCode::UNAUTHORIZED, "InvalidToken"),
            SessionFull => (StatusCode::CONFLICT, "SessionFull"),
            WrongPhase(_) => (StatusCode::CONFLICT, "WrongPhase"),
            DuplicateOpinion(_) => (StatusCode::CONFLICT, "DuplicateOpinion"),
            DuplicateVerdict(_) => (StatusCode::CONFLICT, "DuplicateVerdict"),
            DuplicateFeedback(_) => (StatusCode::CONFLICT, "DuplicateFeedback"),
            NotARejector(_) => (StatusCode::CONFLICT, "NotARejector"),
            Question(_) => (StatusCode::UNPROCESSABLE_ENTITY, "InvalidQuestion"),
            Domain(_) => (StatusCode::CONFLICT, "IllegalTransition"),
            Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Storage"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.code();
        (status, Json(json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Storage(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn participant(svc: &SessionService, id: &SessionId, headers: &HeaderMap) -> Result<ParticipantId, ServiceError> {
    let token = bearer(headers).ok_or(ServiceError::InvalidToken)?;
    svc.authenticate(id, token)
}

/// Blanks feedback texts when the config hides them.
fn redact(hide: bool, mut e: SessionEvent) -> SessionEvent {
    if hide {
        if let EventBody::FeedbackPosted(f) = &mut e.body {
            f.text.clear();
        }
    }
    e
}

pub fn router(svc: Arc<SessionService>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/questions", get(list_questions).post(add_question))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/join", post(join))
        .route("/sessions/:id/opinion", post(opinion))
        .route("/sessions/:id/verdict", post(verdict))
        .route("/sessions/:id/feedback", post(feedback))
        .route("/sessions/:id/events", get(events))
        .with_state(svc)
}

type Svc = State<Arc<SessionService>>;

async fn list_questions(State(svc): Svc) -> Json<Vec<Question>> {
    Json(svc.questions())
}

async fn add_question(State(svc): Svc, headers: HeaderMap, Json(q): Json<Question>) -> ApiResult<StatusCode> {
    let expected = svc
        .config()
        .admin_token_env
        .as_deref()
        .and_then(|var| std::env::var(var).ok())
        .filter(|t| !t.is_empty());
    match (expected, bearer(&headers)) {
        (Some(want), Some(got)) if want == got => {}
        _ => return Err(ApiError(ServiceError::InvalidToken)),
    }
    blocking(move || svc.add_question(q)).await?;
    Ok(StatusCode::CREATED)
}

async fn create_session(State(svc): Svc, Json(req): Json<CreateSession>) -> ApiResult<Response> {
    let s = svc.clone();
    let id = blocking(move || s.create_session(req)).await?;
    let session = svc.session(&id)?;
    info!(session = %id, provider = %session.llm_provider_id, "created over http");
    let body = json!({
        "session_id": id,
        "llm_provider_id": session.llm_provider_id,
        "max_iterations": session.max_iterations,
        "join_path": format!("/sessions/{id}/join"),
    });
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn get_session(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    let id = SessionId::new(id);
    let mut snap = svc.snapshot(&id)?;
    let hide = svc.config().hide_feedback;
    if hide {
        for it in &mut snap.session.iterations {
            for f in &mut it.feedbacks {
                f.text.clear();
            }
        }
    }
    let mut value = serde_json::to_value(&snap).expect("snapshot serializes");
    if let Some(pid) = bearer(&headers).and_then(|t| svc.authenticate(&id, t).ok()) {
        value["you"] = json!({
            "participant_id": pid,
            "pending_action": snap.pending_actions.get(&pid),
        });
    }
    Ok(Json(value))
}

#[derive(Debug, Default, Deserialize)]
struct JoinBody {
    #[serde(default)]
    display_name: Option<String>,
}

async fn join(State(svc): Svc, Path(id): Path<String>, body: Option<Json<JoinBody>>) -> ApiResult<Response> {
    let name = body.and_then(|Json(b)| b.display_name);
    let ticket = blocking(move || svc.join(&SessionId::new(id), name)).await?;
    Ok((StatusCode::CREATED, Json(ticket)).into_response())
}

#[derive(Debug, Deserialize)]
struct TextBody {
    text: String,
}

#[derive(Debug, Deserialize)]
struct VerdictBody {
    accept: bool,
}

async fn opinion(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap, Json(b): Json<TextBody>) -> ApiResult<Json<super::Ack>> {
    blocking(move || {
        let id = SessionId::new(id);
        let pid = participant(&svc, &id, &headers)?;
        svc.submit_opinion(&id, &pid, &b.text)
    })
    .await
    .map(Json)
}

async fn verdict(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap, Json(b): Json<VerdictBody>) -> ApiResult<Json<super::Ack>> {
    blocking(move || {
        let id = SessionId::new(id);
        let pid = participant(&svc, &id, &headers)?;
        svc.submit_verdict(&id, &pid, b.accept)
    })
    .await
    .map(Json)
}

async fn feedback(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap, Json(b): Json<TextBody>) -> ApiResult<Json<super::Ack>> {
    blocking(move || {
        let id = SessionId::new(id);
        let pid = participant(&svc, &id, &headers)?;
        svc.submit_feedback(&id, &pid, &b.text)
    })
    .await
    .map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct SinceQuery {
    #[serde(default)]
    since: Option<u64>,
}

async fn events(
    State(svc): Svc,
    Path(id): Path<String>,
    Query(q): Query<SinceQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let last_event_id = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let since = q.since.or(last_event_id).unwrap_or(0);
    let stream = svc.subscribe(&SessionId::new(id), since)?;
    let hide = svc.config().hide_feedback;
    let body = futures::stream::unfold(stream, move |mut s| async move {
        let e = redact(hide, s.next().await?);
        let event = Event::default()
            .id(e.sequence_no.to_string())
            .event(e.kind().to_string())
            .data(crate::domain::transcript::event_to_line(&e));
        Some((Ok(event), s))
    });
    Ok(Sse::new(body).keep_alive(KeepAlive::new().interval(Duration::from_secs(15))))
}

/// Serves until ctrl-c, sweeping for idle and stalled sessions in the
/// background.
pub async fn serve(svc: Arc<SessionService>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    let sweeper = {
        let svc = svc.clone();
        let period = Duration::from_secs(svc.config().timeouts.sweep_secs.max(1));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let svc = svc.clone();
                let _ = tokio::task::spawn_blocking(move || {
                    svc.expire_idle();
                    svc.resume_pending();
                })
                .await;
            }
        })
    };
    info!(addr = %listener.local_addr()?, "listening");
    let result = axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    result
}

use std::sync::{Arc, Mutex, PoisonError};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use droidharness_core::actions::parse_model_action;
use droidharness_core::api::{CommitRequest, CommitResponse, FinishRequest, SessionControl, SessionSummary, CONTROL_HEADER};
use droidharness_core::device::{self, Backend};
use droidharness_core::recorder::{RecorderError, RecordingSession, SessionOptions, SessionState, SessionStatus};
use droidharness_core::Action;
use serde::Deserialize;
use tokio::sync::watch;

use crate::error::{ApiError, ApiJson};
use crate::{check_id, Shared};

const DEFAULT_CAPTURE_MS: u64 = 30_000;
const MAX_WAIT_MS: u64 = 60_000;

pub struct SessionSlot {
    session: Mutex<RecordingSession>,
    /// Latest snapshot, readable while a long device call holds the session.
    state: watch::Sender<SessionState>,
    /// Held by the one client allowed to mutate the session.
    token: Mutex<String>,
}

impl SessionSlot {
    fn snapshot(&self) -> SessionState {
        self.state.borrow().clone()
    }

    fn authorize(&self, headers: &HeaderMap) -> Result<(), ApiError> {
        let given = headers.get(CONTROL_HEADER).and_then(|v| v.to_str().ok());
        let held = self.token.lock().unwrap_or_else(PoisonError::into_inner);
        if given == Some(held.as_str()) {
            Ok(())
        } else {
            Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "read_only",
                "this client does not control the session; claim it to take over",
            ))
        }
    }
}

fn new_token() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

fn slot(state: &Shared, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
    check_id(id)?;
    let sessions = state.sessions.read().unwrap_or_else(PoisonError::into_inner);
    sessions.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("session {id}")))
}

fn controlled_slot(state: &Shared, id: &str, headers: &HeaderMap) -> Result<Arc<SessionSlot>, ApiError> {
    let slot = slot(state, id)?;
    slot.authorize(headers)?;
    Ok(slot)
}

/// Runs `f` on a blocking thread and publishes the resulting state.
async fn mutate<T, F>(slot: Arc<SessionSlot>, f: F) -> Result<(T, SessionState), ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut RecordingSession) -> Result<T, RecorderError> + Send + 'static,
{
    let out = tokio::task::spawn_blocking(move || {
        let mut session = slot.session.lock().unwrap_or_else(PoisonError::into_inner);
        let out = f(&mut session);
        let state = session.state();
        slot.state.send_replace(state.clone());
        out.map(|v| (v, state))
    })
    .await??;
    Ok(out)
}

fn summary(s: &SessionState) -> SessionSummary {
    SessionSummary {
        session_id: s.meta.session_id.clone(),
        app: s.meta.app.clone(),
        instruction: s.meta.instruction.clone(),
        status: s.status,
        steps: s.steps.len(),
    }
}

pub async fn create(
    State(state): State<Shared>,
    ApiJson(options): ApiJson<SessionOptions>,
) -> Result<(StatusCode, Json<SessionControl>), ApiError> {
    if let Some(id) = &options.session_id {
        check_id(id)?;
        if state.sessions.read().unwrap_or_else(PoisonError::into_inner).contains_key(id) {
            return Err(ApiError::new(StatusCode::CONFLICT, "busy", format!("session {id} is already open")));
        }
    }
    // One physical device can only record one demonstration at a time.
    if state.config.device.backend == Backend::Adb {
        let sessions = state.sessions.read().unwrap_or_else(PoisonError::into_inner);
        if let Some(open) = sessions.values().find(|s| s.snapshot().status != SessionStatus::Finished) {
            let id = open.snapshot().meta.session_id;
            return Err(ApiError::new(StatusCode::CONFLICT, "busy", format!("session {id} is still recording on the device")));
        }
    }
    let root = state.config.traces_root.clone();
    let device_cfg = state.config.device.clone();
    let session = tokio::task::spawn_blocking(move || -> Result<RecordingSession, RecorderError> {
        let dev = device::setup(&device_cfg)?;
        RecordingSession::create(&root, options, dev)
    })
    .await??;
    let snapshot = session.state();
    let id = snapshot.meta.session_id.clone();
    let (tx, _) = watch::channel(snapshot.clone());
    let mut sessions = state.sessions.write().unwrap_or_else(PoisonError::into_inner);
    if sessions.contains_key(&id) {
        return Err(ApiError::new(StatusCode::CONFLICT, "busy", format!("session {id} is already open")));
    }
    let token = new_token();
    let slot = SessionSlot { session: Mutex::new(session), state: tx, token: Mutex::new(token.clone()) };
    sessions.insert(id.clone(), Arc::new(slot));
    log::info!("session {id}: recording {:?} in {}", snapshot.meta.instruction, snapshot.meta.app);
    Ok((StatusCode::CREATED, Json(SessionControl { token, state: snapshot })))
}

/// Issues a fresh control token; the previous holder becomes an observer.
pub async fn claim(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionControl>, ApiError> {
    let slot = slot(&state, &id)?;
    let token = new_token();
    *slot.token.lock().unwrap_or_else(PoisonError::into_inner) = token.clone();
    log::info!("session {id}: control claimed");
    Ok(Json(SessionControl { token, state: slot.snapshot() }))
}

pub async fn list(State(state): State<Shared>) -> Json<Vec<SessionSummary>> {
    let sessions = state.sessions.read().unwrap_or_else(PoisonError::into_inner);
    let mut out: Vec<SessionSummary> = sessions.values().map(|s| summary(&s.snapshot())).collect();
    out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
    Json(out)
}

#[derive(Debug, Deserialize)]
pub struct WaitQuery {
    /// Return once the revision exceeds this value.
    since: Option<u64>,
    #[serde(default)]
    wait_ms: u64,
}

/// Current state. With `since`, long-polls up to `wait_ms` for a newer
/// revision and returns whatever is current when the wait ends.
pub async fn state(
    State(state): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<WaitQuery>,
) -> Result<Json<SessionState>, ApiError> {
    let slot = slot(&state, &id)?;
    if let Some(since) = q.since {
        let mut rx = slot.state.subscribe();
        let wait = Duration::from_millis(q.wait_ms.min(MAX_WAIT_MS));
        let _ = tokio::time::timeout(wait, rx.wait_for(|s| s.revision > since)).await;
    }
    Ok(Json(slot.snapshot()))
}

pub async fn begin(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<SessionState>, ApiError> {
    let slot = controlled_slot(&state, &id, &headers)?;
    let (_, snapshot) = mutate(slot, |s| s.begin_step()).await?;
    Ok(Json(snapshot))
}

pub async fn commit(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<CommitRequest>,
) -> Result<Json<CommitResponse>, ApiError> {
    let slot = controlled_slot(&state, &id, &headers)?;
    let action = match &req {
        CommitRequest::Action { action } => Some(
            parse_model_action(action)
                .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "action_parse", e.to_string()))?,
        ),
        CommitRequest::Type { text } => Some(Action::Type { text: text.clone() }),
        CommitRequest::Home => Some(Action::Home),
        CommitRequest::Back => Some(Action::Back),
        CommitRequest::Finish { answer } => Some(Action::Finish { answer: answer.clone() }),
        CommitRequest::Gesture { .. } | CommitRequest::Capture { .. } => None,
    };
    let (step, snapshot) = mutate(slot, move |s| match (action, req) {
        (Some(a), _) => s.commit_step(a).map(Some),
        (None, CommitRequest::Gesture { events }) => s.commit_gesture(&events).map(Some),
        (None, CommitRequest::Capture { timeout_ms }) => {
            s.await_gesture(Duration::from_millis(timeout_ms.unwrap_or(DEFAULT_CAPTURE_MS)))
        }
        (None, _) => unreachable!("every other request maps to an action"),
    })
    .await?;
    let trace_path = (snapshot.status == SessionStatus::Finished)
        .then(|| state.config.traces_root.join(&snapshot.meta.session_id).join("trace.jsonl"));
    Ok(Json(CommitResponse { step, state: snapshot, trace_path }))
}

pub async fn finish(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<FinishRequest>,
) -> Result<Json<CommitResponse>, ApiError> {
    let slot = controlled_slot(&state, &id, &headers)?;
    let (path, snapshot) = mutate(slot, move |s| s.finish_session(req.answer)).await?;
    let step = snapshot.steps.last().cloned();
    Ok(Json(CommitResponse { step, state: snapshot, trace_path: Some(path) }))
}

pub async fn screenshot(State(state): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let slot = slot(&state, &id)?;
    let (png, _) = mutate(slot, |s| s.live_screenshot()).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

/// Closes the session. An unfinished session's directory is deleted; a
/// finished one keeps its trace.
pub async fn remove(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<StatusCode, ApiError> {
    controlled_slot(&state, &id, &headers)?;
    let removed = state.sessions.write().unwrap_or_else(PoisonError::into_inner).remove(&id);
    let slot = removed.ok_or_else(|| ApiError::not_found(format!("session {id}")))?;
    tokio::task::spawn_blocking(move || -> Result<(), ApiError> {
        let session = slot.session.lock().unwrap_or_else(PoisonError::into_inner);
        if session.status() != SessionStatus::Finished {
            let dir = session.dir();
            std::fs::remove_dir_all(dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
            log::info!("session {id}: abandoned");
        }
        Ok(())
    })
    .await??;
    Ok(StatusCode::NO_CONTENT)
}

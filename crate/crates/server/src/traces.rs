use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use droidharness_core::api::{ExpandRequest, ExportRequest, ReviewRequest};
use droidharness_core::recorder::{
    expand_tasks, export_all, export_training_samples, list_traces, read_review, submit_review, ExportOptions,
    ExportSummary, Expansion, RecordedTrace, RecorderError, Review, TraceSummary,
};

use crate::error::{ApiError, ApiJson};
use crate::{check_id, Shared};

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, RecorderError> + Send + 'static,
{
    Ok(tokio::task::spawn_blocking(f).await??)
}

pub async fn list(State(state): State<Shared>) -> Result<Json<Vec<TraceSummary>>, ApiError> {
    let root = state.config.traces_root.clone();
    Ok(Json(blocking(move || list_traces(&root)).await?))
}

pub async fn get(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<RecordedTrace>, ApiError> {
    check_id(&id)?;
    let dir = state.config.traces_root.join(&id);
    Ok(Json(blocking(move || RecordedTrace::load(&dir)).await?))
}

/// The pre-action screenshot of one recorded step.
pub async fn screenshot(
    State(state): State<Shared>,
    Path((id, step)): Path<(String, usize)>,
) -> Result<impl IntoResponse, ApiError> {
    check_id(&id)?;
    let dir = state.config.traces_root.join(&id);
    let png = blocking(move || {
        let trace = RecordedTrace::load(&dir)?;
        let s = trace.steps.get(step).ok_or_else(|| RecorderError::NotFound(format!("step {step} of trace {id}")))?;
        let path = dir.join(&s.pre_screenshot_path);
        std::fs::read(&path).map_err(|e| RecorderError::Io { path, message: e.to_string() })
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png))
}

pub async fn review(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Review>, ApiError> {
    check_id(&id)?;
    let dir = state.config.traces_root.join(&id);
    Ok(Json(blocking(move || read_review(&dir)).await?))
}

/// Records a verdict. A trace already verified or rejected answers 409 with
/// the standing review.
pub async fn submit(
    State(state): State<Shared>,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<ReviewRequest>,
) -> Result<Json<Review>, ApiError> {
    check_id(&id)?;
    let dir = state.config.traces_root.join(&id);
    let review = blocking(move || submit_review(&dir, req.verdict, req.reviewer, req.note)).await?;
    log::info!("trace {id}: {}", review.status);
    Ok(Json(review))
}

pub async fn export(
    State(state): State<Shared>,
    ApiJson(req): ApiJson<ExportRequest>,
) -> Result<Json<Vec<ExportSummary>>, ApiError> {
    if let Some(id) = &req.trace_id {
        check_id(id)?;
    }
    let mut options = ExportOptions::new(req.mode);
    options.templates = state.config.templates.clone();
    options.verified_only = req.verified_only;
    if let Some(extra) = req.redaction {
        options.redaction.merge(extra);
    }
    let root = state.config.traces_root.clone();
    let summaries = blocking(move || match req.trace_id {
        Some(id) => export_training_samples(&root.join(&id), &req.out_dir.join(&id), &options).map(|s| vec![s]),
        None => export_all(&root, &req.out_dir, &options),
    })
    .await?;
    Ok(Json(summaries))
}

pub async fn expand(
    State(state): State<Shared>,
    ApiJson(req): ApiJson<ExpandRequest>,
) -> Result<Json<Expansion>, ApiError> {
    let expander = state.config.expander.clone().ok_or_else(|| {
        ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "no_model", "the server has no model endpoint for expansion")
    })?;
    let templates = state.config.templates.clone();
    let expansion = blocking(move || {
        let llm = expander.client()?;
        expand_tasks(&req.seeds, llm.as_ref(), &req.app, req.n, &templates)
    })
    .await?;
    Ok(Json(expansion))
}

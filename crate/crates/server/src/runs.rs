use std::sync::atomic::Ordering;
use std::sync::{Arc, Mutex, PoisonError};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::Json;
use droidharness_core::api::{RunState, RunStatus};
use droidharness_core::bench::{load_suite, run_suite, SuiteConfig};
use droidharness_core::device::{Backend, SimDevice};

use crate::error::{ApiError, ApiJson};
use crate::Shared;

/// Checks the config and suite, then runs the suite in the background.
pub async fn start(
    State(state): State<Shared>,
    ApiJson(cfg): ApiJson<SuiteConfig>,
) -> Result<(StatusCode, Json<RunStatus>), ApiError> {
    let busy = state.runs.read().unwrap_or_else(PoisonError::into_inner).values().any(|r| {
        let r = r.lock().unwrap_or_else(PoisonError::into_inner);
        r.state == RunState::Running && r.output_dir == cfg.output_dir
    });
    if busy {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            "busy",
            format!("a run is already writing to {}", cfg.output_dir.display()),
        ));
    }
    let checked = cfg.clone();
    let total = tokio::task::spawn_blocking(move || -> Result<usize, ApiError> {
        checked.validate()?;
        let registry = match checked.device.backend {
            Backend::Sim => Some(SimDevice::new(checked.device.clone()).map_err(|e| ApiError::invalid(e.to_string()))?.apps().to_vec()),
            Backend::Adb => None,
        };
        Ok(load_suite(&checked.tasks, registry.as_deref())?.len())
    })
    .await??;

    let run_id = format!("run-{}", state.next_run.fetch_add(1, Ordering::SeqCst));
    let status = RunStatus {
        run_id: run_id.clone(),
        state: RunState::Running,
        output_dir: cfg.output_dir.clone(),
        total,
        completed: 0,
        report: None,
        executed: Vec::new(),
        error: None,
    };
    let slot = Arc::new(Mutex::new(status.clone()));
    state.runs.write().unwrap_or_else(PoisonError::into_inner).insert(run_id.clone(), slot.clone());
    log::info!("{run_id}: {total} tasks from {}", cfg.tasks.display());

    tokio::task::spawn_blocking(move || {
        let progress = |r: &droidharness_core::evaluation::EvalResult| {
            let mut s = slot.lock().unwrap_or_else(PoisonError::into_inner);
            s.completed += 1;
            log::info!("{}: {} {}", s.run_id, r.task_id, if r.completed { "completed" } else { "not completed" });
        };
        let outcome = run_suite(&cfg, Some(&progress));
        let mut s = slot.lock().unwrap_or_else(PoisonError::into_inner);
        match outcome {
            Ok(o) => {
                s.state = RunState::Finished;
                s.report = Some(o.report);
                s.executed = o.executed;
            }
            Err(e) => {
                log::error!("{}: {e}", s.run_id);
                s.state = RunState::Failed;
                s.error = Some(e.to_string());
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(status)))
}

pub async fn status(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<RunStatus>, ApiError> {
    let runs = state.runs.read().unwrap_or_else(PoisonError::into_inner);
    let slot = runs.get(&id).ok_or_else(|| ApiError::not_found(format!("run {id}")))?;
    let status = slot.lock().unwrap_or_else(PoisonError::into_inner).clone();
    Ok(Json(status))
}

pub async fn list(State(state): State<Shared>) -> Json<Vec<RunStatus>> {
    let runs = state.runs.read().unwrap_or_else(PoisonError::into_inner);
    let mut all: Vec<RunStatus> = runs.values().map(|r| r.lock().unwrap_or_else(PoisonError::into_inner).clone()).collect();
    all.sort_by_key(|r| r.run_id.trim_start_matches("run-").parse::<u64>().unwrap_or(u64::MAX));
    Json(all)
}

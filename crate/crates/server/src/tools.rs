use axum::extract::State;
use axum::Json;
use droidharness_core::actions::{parse_model_action, serialize_action};
use droidharness_core::api::{
    CompressRequest, Health, ParseActionRequest, ParseActionResponse, ReportRequest, ReportResponse, ValidateRequest,
    ValidateResponse,
};
use droidharness_core::bench::{report_from_dir, validate_suite};
use droidharness_core::device::SimDevice;
use droidharness_core::metrics::render;
use droidharness_core::ui_tree::{compress as compress_tree, parse_hierarchy_xml};
use droidharness_core::{CompressedView, DeviceConfig};

use crate::error::{ApiError, ApiJson};
use crate::Shared;

pub async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

pub async fn compress(ApiJson(req): ApiJson<CompressRequest>) -> Result<Json<CompressedView>, ApiError> {
    let tree = parse_hierarchy_xml(&req.xml, req.screen_width, req.screen_height)
        .map_err(|e| ApiError::new(axum::http::StatusCode::UNPROCESSABLE_ENTITY, "ui_tree", e.to_string()))?;
    Ok(Json(compress_tree(&tree)))
}

pub async fn parse_action(ApiJson(req): ApiJson<ParseActionRequest>) -> Result<Json<ParseActionResponse>, ApiError> {
    let action = parse_model_action(&req.text)
        .map_err(|e| ApiError::new(axum::http::StatusCode::UNPROCESSABLE_ENTITY, "action_parse", e.to_string()))?;
    Ok(Json(ParseActionResponse { action: serialize_action(&action), name: action.name().into() }))
}

/// With `sim_apps`, app ids and fixtures are checked against the bundled
/// apps plus any in the server's `sim_apps_dir`.
pub async fn validate(
    State(state): State<Shared>,
    ApiJson(req): ApiJson<ValidateRequest>,
) -> Result<Json<ValidateResponse>, ApiError> {
    let apps_dir = state.config.device.sim_apps_dir.clone();
    let diagnostics = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let apps = if req.sim_apps {
            let cfg = DeviceConfig { sim_apps_dir: apps_dir, ..DeviceConfig::sim() };
            let sim = SimDevice::new(cfg).map_err(|e| ApiError::invalid(e.to_string()))?;
            Some(sim.apps().to_vec())
        } else {
            None
        };
        Ok(validate_suite(&req.path, apps.as_deref()))
    })
    .await??;
    Ok(Json(ValidateResponse { diagnostics }))
}

pub async fn report(ApiJson(req): ApiJson<ReportRequest>) -> Result<Json<ReportResponse>, ApiError> {
    let report = tokio::task::spawn_blocking(move || report_from_dir(&req.output_dir)).await??;
    let text = render(&report, req.format);
    Ok(Json(ReportResponse { report, text }))
}

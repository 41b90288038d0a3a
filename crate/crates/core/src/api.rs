//! Request and response bodies of the HTTP service, shared with its client.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bench::Diagnostic;
use crate::metrics::{MetricsReport, ReportFormat};
use crate::recorder::{ExportMode, RecordedStep, Redaction, Review, SessionState, SessionStatus, TouchEvent, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressRequest {
    pub xml: String,
    pub screen_width: u32,
    pub screen_height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseActionRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseActionResponse {
    /// Canonical serialized form.
    pub action: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub path: PathBuf,
    /// Also check app ids and fixtures against the bundled simulator apps.
    #[serde(default = "yes")]
    pub sim_apps: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub state: RunState,
    pub output_dir: PathBuf,
    /// Tasks in the suite, including ones a resumed run skips.
    pub total: usize,
    /// Tasks evaluated by this run so far.
    pub completed: usize,
    #[serde(default)]
    pub report: Option<MetricsReport>,
    #[serde(default)]
    pub executed: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub output_dir: PathBuf,
    pub format: ReportFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub report: MetricsReport,
    /// The report rendered in the requested format.
    pub text: String,
}

/// One annotator input. Element actions arrive either as an action string
/// or as the raw touch events of a gesture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CommitRequest {
    Action { action: String },
    Type { text: String },
    Home,
    Back,
    Finish {
        #[serde(default)]
        answer: Option<String>,
    },
    Gesture { events: Vec<TouchEvent> },
    /// Waits for a gesture on a hand-operated device.
    Capture {
        #[serde(default)]
        timeout_ms: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommitResponse {
    /// Absent when a capture timed out without a gesture.
    pub step: Option<RecordedStep>,
    pub state: SessionState,
    /// Set once the session is finished.
    #[serde(default)]
    pub trace_path: Option<PathBuf>,
}

/// Header carrying a session's control token on mutating requests.
pub const CONTROL_HEADER: &str = "x-control-token";

/// Returned on session creation and on a control claim. Only the holder of
/// the latest token may mutate the session; everyone else observes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionControl {
    pub token: String,
    pub state: SessionState,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FinishRequest {
    #[serde(default)]
    pub answer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub app: String,
    pub instruction: String,
    pub status: SessionStatus,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub verdict: Verdict,
    #[serde(default)]
    pub reviewer: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRequest {
    pub out_dir: PathBuf,
    pub mode: ExportMode,
    /// A single trace; every finished trace when absent.
    #[serde(default)]
    pub trace_id: Option<String>,
    #[serde(default)]
    pub verified_only: bool,
    /// Added to the bundled apps' redaction lists.
    #[serde(default)]
    pub redaction: Option<Redaction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandRequest {
    pub seeds: Vec<String>,
    pub app: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorDetail {
    /// Stable machine-readable kind, e.g. `state`, `conflict`, `not_found`.
    pub code: String,
    pub message: String,
    /// The standing review, on review conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review: Option<Review>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

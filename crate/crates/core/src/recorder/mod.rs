//! Human demonstration recording: gesture classification, per-step capture
//! sessions, trace review and training-sample export.

mod expand;
mod export;
mod gesture;
mod review;
mod session;
mod trace;

use std::path::{Path, PathBuf};

pub use expand::{expand_tasks, Candidate, Expansion};
pub use export::{
    export_all, export_training_samples, ExcludedStep, ExportMode, ExportOptions, ExportSummary, Redaction,
    TrainingSample, REDACTED,
};
pub use gesture::{
    classify_gesture, resolve_gesture, Gesture, GestureClass, GestureError, GestureThresholds, TouchEvent, TouchKind,
};
pub use review::{list_traces, read_review, submit_review, Review, ReviewStatus, TraceSummary, Verdict};
pub use session::{RecordingSession, SessionOptions, SessionState, SessionStatus, StepCapture};
pub use trace::{RecordedStep, RecordedTrace, SessionMeta, StepFlag};
use thiserror::Error;

use crate::actions::GroundError;
use crate::agent::EndpointError;
use crate::device::DeviceError;

#[derive(Debug, Error)]
pub enum RecorderError {
    #[error("cannot {op} while the session is {status}")]
    State { op: &'static str, status: SessionStatus },
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Gesture(#[from] GestureError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("corrupt trace at {}: {message}", path.display())]
    CorruptTrace { path: PathBuf, message: String },
    #[error("trace was already reviewed as {}", .0.status)]
    Conflict(Review),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("trace {0} is excluded from export by its review")]
    Rejected(String),
    #[error("at least one seed instruction is required")]
    EmptySeeds,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RecorderError + '_ {
    move |e| RecorderError::Io { path: path.to_path_buf(), message: e.to_string() }
}

#[cfg(test)]
mod tests;

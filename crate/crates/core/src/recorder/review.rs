//! Cross-verification: a second annotator marks each finished trace verified
//! or rejected. The verdict lives in `review.json` beside `trace.jsonl`.

use std::fmt;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::trace::{RecordedTrace, TRACE_FILE};
use super::{io_err, RecorderError};
use crate::util::{now_ms, write_atomic};

pub const REVIEW_FILE: &str = "review.json";

/// Serializes read-check-write cycles on review files within the process.
static REVIEW_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    Pending,
    Verified,
    Rejected,
}

impl fmt::Display for ReviewStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReviewStatus::Pending => "pending",
            ReviewStatus::Verified => "verified",
            ReviewStatus::Rejected => "rejected",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    Rejected,
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "verified" | "verify" => Ok(Verdict::Verified),
            "rejected" | "reject" => Ok(Verdict::Rejected),
            other => Err(format!("unknown verdict {other:?} (expected verified or rejected)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Review {
    pub status: ReviewStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reviewed_ms: Option<i64>,
}

pub(crate) fn write_review(dir: &Path, review: &Review) -> Result<(), RecorderError> {
    let path = dir.join(REVIEW_FILE);
    let body = serde_json::to_vec_pretty(review).expect("review serializes");
    write_atomic(&path, &body).map_err(io_err(&path))
}

/// The trace's review; pending when none was recorded.
pub fn read_review(dir: &Path) -> Result<Review, RecorderError> {
    if !dir.join(TRACE_FILE).exists() {
        return Err(RecorderError::NotFound(format!("{} has no {TRACE_FILE}", dir.display())));
    }
    let path = dir.join(REVIEW_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| RecorderError::CorruptTrace { path: path.clone(), message: e.to_string() }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Review::default()),
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Records a verdict. A trace can be ruled on once; a second ruling fails
/// with [`RecorderError::Conflict`] carrying the standing review.
pub fn submit_review(
    dir: &Path,
    verdict: Verdict,
    reviewer: Option<String>,
    note: Option<String>,
) -> Result<Review, RecorderError> {
    let _guard = REVIEW_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    let current = read_review(dir)?;
    if current.status != ReviewStatus::Pending {
        return Err(RecorderError::Conflict(current));
    }
    let review = Review {
        status: match verdict {
            Verdict::Verified => ReviewStatus::Verified,
            Verdict::Rejected => ReviewStatus::Rejected,
        },
        reviewer,
        note,
        reviewed_ms: Some(now_ms()),
    };
    write_review(dir, &review)?;
    Ok(review)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trace_id: String,
    pub app: String,
    pub instruction: String,
    pub steps: usize,
    pub answer: Option<String>,
    pub review: Review,
}

/// Finished traces under `root`, sorted by id. Directories without a
/// `trace.jsonl` (sessions still in progress) are skipped.
pub fn list_traces(root: &Path) -> Result<Vec<TraceSummary>, RecorderError> {
    let mut out = Vec::new();
    let entries = match std::fs::read_dir(root) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(io_err(root)(e)),
    };
    for entry in entries {
        let dir = entry.map_err(io_err(root))?.path();
        if !dir.join(TRACE_FILE).is_file() {
            continue;
        }
        let trace = RecordedTrace::load(&dir)?;
        out.push(TraceSummary {
            trace_id: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            app: trace.meta.app.clone(),
            instruction: trace.meta.instruction.clone(),
            steps: trace.steps.len(),
            answer: trace.answer().map(str::to_string),
            review: read_review(&dir)?,
        });
    }
    out.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
    Ok(out)
}

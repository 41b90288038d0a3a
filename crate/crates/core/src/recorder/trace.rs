//! On-disk form of a recorded demonstration.
//!
//! A trace directory holds `session.json` (task metadata), `trace.jsonl`
//! (one step per line, the last line being the finish step with the answer),
//! `xml/{i}.xml` and `screenshots/{i}.png` captures, and `review.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, Gesture, RecorderError};
use crate::actions::Action;
use crate::util::write_atomic;

pub const SESSION_FILE: &str = "session.json";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub app: String,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_fixture: Option<String>,
    pub screen_width: u32,
    pub screen_height: u32,
    pub started_ms: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFlag {
    /// The gesture's down point hit no element; kept as raw coordinates.
    NoHitElement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedStep {
    pub step_index: usize,
    /// Canonical action string. Absent for raw-coordinate steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    pub pre_xml_path: String,
    pub pre_screenshot_path: String,
    pub capture_timestamp: i64,
    /// When the action was committed; always after `capture_timestamp`.
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gesture: Option<Gesture>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<StepFlag>,
    /// Set on the finish line only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

impl RecordedStep {
    pub fn is_finish(&self) -> bool {
        self.action.as_ref().is_some_and(Action::is_finish)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedTrace {
    pub meta: SessionMeta,
    pub steps: Vec<RecordedStep>,
}

impl RecordedTrace {
    pub fn answer(&self) -> Option<&str> {
        self.steps.last().and_then(|s| s.answer.as_deref())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("step serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse_jsonl(meta: SessionMeta, text: &str) -> Result<Self, serde_json::Error> {
        let steps = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<RecordedStep>, _>>()?;
        Ok(Self { meta, steps })
    }

    /// Writes `session.json` and then `trace.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), RecorderError> {
        let meta_path = dir.join(SESSION_FILE);
        let meta = serde_json::to_vec_pretty(&self.meta).expect("meta serializes");
        write_atomic(&meta_path, &meta).map_err(io_err(&meta_path))?;
        let path = dir.join(TRACE_FILE);
        write_atomic(&path, self.to_jsonl().as_bytes()).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, RecorderError> {
        let corrupt = |path: &Path, message: String| RecorderError::CorruptTrace { path: path.to_path_buf(), message };
        let trace_path = dir.join(TRACE_FILE);
        if !trace_path.exists() {
            return Err(RecorderError::NotFound(format!("{} has no {TRACE_FILE}", dir.display())));
        }
        let meta_path = dir.join(SESSION_FILE);
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| corrupt(&meta_path, e.to_string()))?;
        let meta = serde_json::from_str(&meta_text).map_err(|e| corrupt(&meta_path, e.to_string()))?;
        let text = std::fs::read_to_string(&trace_path).map_err(|e| corrupt(&trace_path, e.to_string()))?;
        Self::parse_jsonl(meta, &text).map_err(|e| corrupt(&trace_path, e.to_string()))
    }
}

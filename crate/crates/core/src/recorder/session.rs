use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::review::{write_review, Review};
use super::trace::{RecordedStep, RecordedTrace, SessionMeta, StepFlag, TRACE_FILE};
use super::{classify_gesture, io_err, resolve_gesture, Gesture, GestureClass, GestureError, GestureThresholds};
use super::{RecorderError, TouchEvent};
use crate::actions::{ground, Action, GroundedAction, LONG_PRESS_DURATION_MS, SWIPE_DURATION_MS};
use crate::device::DeviceHandle;
use crate::ui_tree::{compress, CompressedView};
use crate::util::now_ms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    /// Ready for the next `begin_step`.
    Armed,
    /// Screen captured; waiting for the annotator's action.
    Waiting,
    Finished,
}

impl fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionStatus::Armed => "armed",
            SessionStatus::Waiting => "waiting",
            SessionStatus::Finished => "finished",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionOptions {
    pub app: String,
    pub instruction: String,
    #[serde(default)]
    pub env_fixture: Option<String>,
    #[serde(default)]
    pub thresholds: GestureThresholds,
    /// Generated when absent.
    #[serde(default)]
    pub session_id: Option<String>,
}

impl SessionOptions {
    pub fn new(app: impl Into<String>, instruction: impl Into<String>) -> Self {
        Self {
            app: app.into(),
            instruction: instruction.into(),
            env_fixture: None,
            thresholds: GestureThresholds::default(),
            session_id: None,
        }
    }
}

/// The pre-action capture of the step in progress. Paths are relative to
/// the session directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCapture {
    pub step_index: usize,
    pub pre_xml_path: String,
    pub pre_screenshot_path: String,
    pub capture_timestamp: i64,
    /// Compressed rendering of the captured screen.
    pub elements: String,
}

/// Read-only snapshot served to UI clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub meta: SessionMeta,
    pub status: SessionStatus,
    pub steps: Vec<RecordedStep>,
    pub pending: Option<StepCapture>,
    /// Increments on every mutation.
    pub revision: u64,
}

struct Pending {
    capture: StepCapture,
    view: CompressedView,
}

pub struct RecordingSession {
    meta: SessionMeta,
    dir: PathBuf,
    device: DeviceHandle,
    thresholds: GestureThresholds,
    steps: Vec<RecordedStep>,
    status: SessionStatus,
    pending: Option<Pending>,
    revision: u64,
}

impl fmt::Debug for RecordingSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecordingSession")
            .field("meta", &self.meta)
            .field("status", &self.status)
            .field("steps", &self.steps.len())
            .finish()
    }
}

impl RecordingSession {
    /// Resets the device to the task's app and opens a session directory
    /// under `root`.
    pub fn create(root: &Path, options: SessionOptions, mut device: DeviceHandle) -> Result<Self, RecorderError> {
        if options.instruction.trim().is_empty() {
            return Err(RecorderError::InvalidArgument("instruction is empty".into()));
        }
        device.reset(&options.app, options.env_fixture.as_deref())?;
        let session_id = options.session_id.unwrap_or_else(|| uuid::Uuid::new_v4().simple().to_string());
        if session_id.is_empty() || !session_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(RecorderError::InvalidArgument(format!("session id {session_id:?} is not a plain name")));
        }
        let dir = root.join(&session_id);
        if dir.join(TRACE_FILE).exists() {
            return Err(RecorderError::InvalidArgument(format!("session {session_id} already has a trace")));
        }
        for sub in ["xml", "screenshots"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let (screen_width, screen_height) = device.screen();
        let meta = SessionMeta {
            session_id,
            app: options.app,
            instruction: options.instruction,
            env_fixture: options.env_fixture,
            screen_width,
            screen_height,
            started_ms: now_ms(),
        };
        Ok(Self {
            meta,
            dir,
            device,
            thresholds: options.thresholds,
            steps: Vec::new(),
            status: SessionStatus::Armed,
            pending: None,
            revision: 0,
        })
    }

    pub fn meta(&self) -> &SessionMeta {
        &self.meta
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn steps(&self) -> &[RecordedStep] {
        &self.steps
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            meta: self.meta.clone(),
            status: self.status,
            steps: self.steps.clone(),
            pending: self.pending.as_ref().map(|p| p.capture.clone()),
            revision: self.revision,
        }
    }

    /// The compressed view of the pending capture.
    pub fn pending_view(&self) -> Option<&CompressedView> {
        self.pending.as_ref().map(|p| &p.view)
    }

    /// A fresh screenshot of the live device, PNG encoded.
    pub fn live_screenshot(&mut self) -> Result<Vec<u8>, RecorderError> {
        let obs = self.device.observe(true)?;
        let shot = obs.screenshot.ok_or_else(|| crate::device::DeviceError::Unsupported("screenshots".into()))?;
        Ok(shot.to_png()?)
    }

    fn require(&self, op: &'static str, allowed: &[SessionStatus]) -> Result<(), RecorderError> {
        if allowed.contains(&self.status) {
            Ok(())
        } else {
            Err(RecorderError::State { op, status: self.status })
        }
    }

    fn capture(&mut self) -> Result<Pending, RecorderError> {
        let obs = self.device.observe(true)?;
        let capture_timestamp = now_ms();
        let step_index = self.steps.len();
        let shot = obs.screenshot.as_ref().ok_or_else(|| crate::device::DeviceError::Unsupported("screenshots".into()))?;
        let png = shot.to_png()?;
        let pre_xml_path = format!("xml/{step_index}.xml");
        let pre_screenshot_path = format!("screenshots/{step_index}.png");
        let xml_file = self.dir.join(&pre_xml_path);
        std::fs::write(&xml_file, &obs.xml).map_err(io_err(&xml_file))?;
        let png_file = self.dir.join(&pre_screenshot_path);
        std::fs::write(&png_file, png).map_err(io_err(&png_file))?;
        let view = compress(&obs.tree);
        let capture = StepCapture {
            step_index,
            pre_xml_path,
            pre_screenshot_path,
            capture_timestamp,
            elements: view.text_rendering.clone(),
        };
        Ok(Pending { capture, view })
    }

    /// Captures the pre-action XML and screenshot. On a failed capture the
    /// session stays armed so the annotator can retry.
    pub fn begin_step(&mut self) -> Result<StepCapture, RecorderError> {
        self.require("begin a step", &[SessionStatus::Armed])?;
        let pending = self.capture()?;
        let capture = pending.capture.clone();
        self.pending = Some(pending);
        self.status = SessionStatus::Waiting;
        self.revision += 1;
        Ok(capture)
    }

    /// Records `action` and performs it on the device. A finish action
    /// closes the session as [`finish_session`](Self::finish_session) does.
    /// If the device rejects the action nothing is recorded and the session
    /// keeps waiting.
    pub fn commit_step(&mut self, action: Action) -> Result<RecordedStep, RecorderError> {
        if let Action::Finish { answer } = action {
            self.finish_session(answer)?;
            return Ok(self.steps.last().cloned().expect("finish appended a step"));
        }
        self.require("commit a step", &[SessionStatus::Waiting])?;
        self.commit(Some(action), None, false)
    }

    /// Classifies a raw touch stream against the pending capture and commits
    /// it. A gesture that hits no element is kept as a raw-coordinate step
    /// flagged for review.
    pub fn commit_gesture(&mut self, events: &[TouchEvent]) -> Result<RecordedStep, RecorderError> {
        self.require("commit a gesture", &[SessionStatus::Waiting])?;
        let gesture = classify_gesture(events, self.thresholds)?;
        let view = &self.pending.as_ref().expect("waiting implies a capture").view;
        match resolve_gesture(&gesture, view) {
            Ok(action) => self.commit(Some(action), Some(gesture), true),
            Err(GestureError::NoHitElement { x, y }) => {
                log::warn!("session {}: gesture at ({x},{y}) hit no element; flagged for review", self.meta.session_id);
                self.commit(None, Some(gesture), true)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Waits for the annotator to touch the device and commits the gesture.
    /// Only for devices operated by hand.
    pub fn await_gesture(&mut self, timeout: Duration) -> Result<Option<RecordedStep>, RecorderError> {
        self.require("capture a gesture", &[SessionStatus::Waiting])?;
        match self.device.next_gesture(timeout)? {
            Some(events) => self.commit_gesture(&events).map(Some),
            None => Ok(None),
        }
    }

    fn commit(
        &mut self,
        action: Option<Action>,
        gesture: Option<Gesture>,
        from_gesture: bool,
    ) -> Result<RecordedStep, RecorderError> {
        let pending = self.pending.as_ref().expect("waiting implies a capture");
        let grounded = match (&action, &gesture) {
            (Some(a), _) => ground(a, &pending.view, self.device.screen())?,
            (None, Some(g)) => raw_grounding(g),
            (None, None) => unreachable!("a step needs an action or a gesture"),
        };
        // On a hand-operated device the gesture already happened.
        if !(from_gesture && self.device.external_input()) {
            self.device.perform(&grounded)?;
        }
        let capture = self.pending.take().expect("checked above").capture;
        let step = RecordedStep {
            step_index: capture.step_index,
            flag: action.is_none().then_some(StepFlag::NoHitElement),
            action,
            pre_xml_path: capture.pre_xml_path,
            pre_screenshot_path: capture.pre_screenshot_path,
            timestamp: now_ms().max(capture.capture_timestamp + 1),
            capture_timestamp: capture.capture_timestamp,
            gesture,
            answer: None,
        };
        self.steps.push(step.clone());
        self.status = SessionStatus::Armed;
        self.revision += 1;
        Ok(step)
    }

    /// Appends the finish step, writes the trace files and closes the
    /// session. Returns the path of `trace.jsonl`.
    pub fn finish_session(&mut self, answer: Option<String>) -> Result<PathBuf, RecorderError> {
        self.require("finish", &[SessionStatus::Armed, SessionStatus::Waiting])?;
        let capture = match self.pending.take() {
            Some(p) => p.capture,
            None => self.capture()?.capture,
        };
        let answer = answer.filter(|a| !a.trim().is_empty());
        self.steps.push(RecordedStep {
            step_index: capture.step_index,
            action: Some(Action::Finish { answer: answer.clone() }),
            pre_xml_path: capture.pre_xml_path,
            pre_screenshot_path: capture.pre_screenshot_path,
            timestamp: now_ms().max(capture.capture_timestamp + 1),
            capture_timestamp: capture.capture_timestamp,
            gesture: None,
            flag: None,
            answer,
        });
        let trace = RecordedTrace { meta: self.meta.clone(), steps: self.steps.clone() };
        trace.write(&self.dir)?;
        write_review(&self.dir, &Review::default())?;
        self.status = SessionStatus::Finished;
        self.revision += 1;
        Ok(self.dir.join(TRACE_FILE))
    }
}

/// Pixel-level form of a gesture that resolved to no element.
fn raw_grounding(g: &Gesture) -> GroundedAction {
    let (x, y) = g.down;
    match g.class {
        GestureClass::Tap => GroundedAction::TapAt { x, y },
        GestureClass::LongPress => GroundedAction::LongPressAt { x, y, duration_ms: LONG_PRESS_DURATION_MS },
        GestureClass::Swipe { .. } => GroundedAction::SwipeFromTo {
            x1: x,
            y1: y,
            x2: g.up.0,
            y2: g.up.1,
            duration_ms: u32::try_from(g.duration_ms).unwrap_or(SWIPE_DURATION_MS).max(1),
        },
    }
}

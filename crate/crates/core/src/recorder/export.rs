//! Turns recorded traces into instruction-tuning samples.
//!
//! Each kept step becomes one sample per mode: the prompt an agent would have
//! received at that point (instruction, action history, current screen) and
//! the recorded action as the target. XML and SoM samples of a step share
//! one compressed view, so their element indices agree.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgba, RgbaImage};
use serde::{Deserialize, Serialize};

use super::review::{read_review, ReviewStatus};
use super::trace::{RecordedTrace, TRACE_FILE};
use super::{io_err, RecorderError};
use crate::actions::serialize_action;
use crate::agent::{build_prompt, EpisodeConfig, Framework, HistoryEntry, Mode, Templates};
use crate::device::SimApp;
use crate::som::{decode_png, render_som, LegendEntry};
use crate::ui_tree::{compress, parse_hierarchy_xml, screen_changed, CompressedView, RawUiTree, UiNode};
use crate::util::write_atomic;

/// Replaces redacted text in both the element list and the screenshot.
pub const REDACTED: &str = "[redacted]";
const REDACTION_FILL: Rgba<u8> = Rgba([96, 96, 96, 255]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportMode {
    Xml,
    Som,
    Both,
}

impl ExportMode {
    fn modes(self) -> &'static [Mode] {
        match self {
            ExportMode::Xml => &[Mode::Xml],
            ExportMode::Som => &[Mode::Som],
            ExportMode::Both => &[Mode::Xml, Mode::Som],
        }
    }
}

impl FromStr for ExportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "xml" => Ok(ExportMode::Xml),
            "som" => Ok(ExportMode::Som),
            "both" => Ok(ExportMode::Both),
            other => Err(format!("unknown export mode {other:?} (expected xml, som or both)")),
        }
    }
}

/// Per-app resource-id leaves whose text is hidden on export.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Redaction(pub BTreeMap<String, BTreeSet<String>>);

impl Redaction {
    pub fn from_sim_apps(apps: &[SimApp]) -> Self {
        Self(
            apps.iter()
                .filter(|a| !a.redact.is_empty())
                .map(|a| (a.app_id.clone(), a.redact.iter().cloned().collect()))
                .collect(),
        )
    }

    /// Parses `app = ["resource_id", ...]` lines.
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn merge(&mut self, other: Redaction) {
        for (app, ids) in other.0 {
            self.0.entry(app).or_default().extend(ids);
        }
    }

    fn for_app(&self, app: &str) -> Option<&BTreeSet<String>> {
        self.0.get(app).filter(|ids| !ids.is_empty())
    }
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub mode: ExportMode,
    pub redaction: Redaction,
    pub templates: Templates,
    pub history_window: Option<usize>,
    /// Export only traces a reviewer verified; otherwise pending ones too.
    pub verified_only: bool,
}

impl ExportOptions {
    pub fn new(mode: ExportMode) -> Self {
        Self {
            mode,
            redaction: Redaction::from_sim_apps(&SimApp::bundled()),
            templates: Templates::default(),
            history_window: None,
            verified_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub trace_id: String,
    pub step_index: usize,
    pub mode: Mode,
    pub instruction: String,
    pub system: String,
    pub user: String,
    /// Annotated screenshot, relative to the export directory (som only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legend: Option<Vec<LegendEntry>>,
    /// Element indices of the compressed view shown in the prompt.
    pub elements: Vec<usize>,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcludedStep {
    pub step_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExportSummary {
    pub trace_id: String,
    pub xml_samples: usize,
    pub som_samples: usize,
    pub excluded: Vec<ExcludedStep>,
    pub files: Vec<PathBuf>,
}

/// One capture, loaded and redacted.
struct Screen {
    tree: RawUiTree,
    view: CompressedView,
    redacted: Vec<crate::ui_tree::Bounds>,
}

fn redact_nodes(nodes: &mut [UiNode], ids: &BTreeSet<String>, hidden: &mut Vec<crate::ui_tree::Bounds>) {
    for n in nodes {
        if ids.contains(n.resource_id_leaf()) {
            if !n.text.is_empty() {
                n.text = REDACTED.to_string();
            }
            if !n.content_desc.is_empty() {
                n.content_desc = REDACTED.to_string();
            }
            hidden.push(n.bounds);
        }
        redact_nodes(&mut n.children, ids, hidden);
    }
}

fn load_screen(dir: &Path, rel: &str, trace: &RecordedTrace, redaction: &Redaction) -> Result<Screen, RecorderError> {
    let path = dir.join(rel);
    let corrupt = |message: String| RecorderError::CorruptTrace { path: path.clone(), message };
    let xml = std::fs::read_to_string(&path).map_err(|e| corrupt(e.to_string()))?;
    let mut tree = parse_hierarchy_xml(&xml, trace.meta.screen_width, trace.meta.screen_height)
        .map_err(|e| corrupt(e.to_string()))?;
    let mut redacted = Vec::new();
    if let Some(ids) = redaction.for_app(&trace.meta.app) {
        redact_nodes(&mut tree.roots, ids, &mut redacted);
    }
    let view = compress(&tree);
    Ok(Screen { tree, view, redacted })
}

fn load_screenshot(path: &Path, hidden: &[crate::ui_tree::Bounds]) -> Result<RgbaImage, RecorderError> {
    let corrupt = |message: String| RecorderError::CorruptTrace { path: path.to_path_buf(), message };
    let bytes = std::fs::read(path).map_err(|e| corrupt(e.to_string()))?;
    let mut img = decode_png(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let (w, h) = img.dimensions();
    for b in hidden {
        let b = b.clamp_to(w, h);
        for y in b.top..b.bottom {
            for x in b.left..b.right {
                img.put_pixel(x as u32, y as u32, REDACTION_FILL);
            }
        }
    }
    Ok(img)
}

fn trace_id_of(dir: &Path) -> String {
    dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Writes `xml.jsonl` and/or `som.jsonl` (plus `som/{step}.png`) for one
/// trace into `out_dir`. Steps flagged for review are excluded and logged.
/// Rejected traces are refused.
pub fn export_training_samples(trace_dir: &Path, out_dir: &Path, options: &ExportOptions) -> Result<ExportSummary, RecorderError> {
    let trace_id = trace_id_of(trace_dir);
    let review = read_review(trace_dir)?;
    if review.status == ReviewStatus::Rejected || (options.verified_only && review.status != ReviewStatus::Verified) {
        return Err(RecorderError::Rejected(trace_id));
    }
    let trace = RecordedTrace::load(trace_dir)?;
    if !trace.steps.last().is_some_and(|s| s.is_finish()) {
        return Err(RecorderError::CorruptTrace {
            path: trace_dir.join(TRACE_FILE),
            message: "the last step is not a finish step".into(),
        });
    }

    let screens = trace
        .steps
        .iter()
        .map(|s| load_screen(trace_dir, &s.pre_xml_path, &trace, &options.redaction))
        .collect::<Result<Vec<_>, _>>()?;

    let mut summary = ExportSummary { trace_id: trace_id.clone(), ..ExportSummary::default() };
    let mut lines: BTreeMap<&'static str, String> = BTreeMap::new();
    let mut history: Vec<HistoryEntry> = Vec::new();
    for (i, step) in trace.steps.iter().enumerate() {
        let Some(action) = step.action.as_ref().filter(|_| step.flag.is_none()) else {
            let reason = match step.flag {
                Some(flag) => serde_json::to_value(flag).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default(),
                None => "no action".to_string(),
            };
            log::warn!("trace {trace_id}: step {} excluded from export ({reason})", step.step_index);
            summary.excluded.push(ExcludedStep { step_index: step.step_index, reason });
            continue;
        };
        let screen = &screens[i];
        for &mode in options.mode.modes() {
            let cfg = EpisodeConfig { mode, framework: Framework::Direct, history_window: options.history_window, ..EpisodeConfig::default() };
            let (som, image) = if mode == Mode::Som {
                let shot = load_screenshot(&trace_dir.join(&step.pre_screenshot_path), &screen.redacted)?;
                let som = render_som(&shot, &screen.view).map_err(|e| RecorderError::CorruptTrace {
                    path: trace_dir.join(&step.pre_screenshot_path),
                    message: e.to_string(),
                })?;
                let rel = format!("som/{:03}.png", step.step_index);
                let path = out_dir.join(&rel);
                write_atomic(&path, &som.png).map_err(io_err(&path))?;
                (Some(som), Some(rel))
            } else {
                (None, None)
            };
            let prompt = build_prompt(&cfg, &options.templates, &trace.meta.instruction, &history, &screen.view, som.as_ref(), false)
                .expect("som mode always has an image here");
            let sample = TrainingSample {
                trace_id: trace_id.clone(),
                step_index: step.step_index,
                mode,
                instruction: trace.meta.instruction.clone(),
                system: prompt.messages[0].joined_text(),
                user: prompt.messages[1].joined_text(),
                image,
                legend: som.map(|s| s.legend),
                elements: screen.view.elements.iter().map(|e| e.index).collect(),
                target: serialize_action(action),
            };
            let key = match mode {
                Mode::Xml => {
                    summary.xml_samples += 1;
                    "xml.jsonl"
                }
                Mode::Som => {
                    summary.som_samples += 1;
                    "som.jsonl"
                }
            };
            let buf = lines.entry(key).or_default();
            buf.push_str(&serde_json::to_string(&sample).expect("sample serializes"));
            buf.push('\n');
        }
        let changed_screen = screens.get(i + 1).is_some_and(|next| screen_changed(&screen.tree, &next.tree));
        history.push(HistoryEntry { step_index: history.len(), action: serialize_action(action), changed_screen });
    }
    for &mode in options.mode.modes() {
        let name = if mode == Mode::Xml { "xml.jsonl" } else { "som.jsonl" };
        let path = out_dir.join(name);
        write_atomic(&path, lines.get(name).map(String::as_bytes).unwrap_or_default()).map_err(io_err(&path))?;
        summary.files.push(path);
    }
    Ok(summary)
}

/// Exports every finished trace under `root` into `out_dir/{trace_id}/`.
/// Rejected (and, with `verified_only`, unverified) traces are skipped.
pub fn export_all(root: &Path, out_dir: &Path, options: &ExportOptions) -> Result<Vec<ExportSummary>, RecorderError> {
    let mut out = Vec::new();
    for t in super::list_traces(root)? {
        match export_training_samples(&root.join(&t.trace_id), &out_dir.join(&t.trace_id), options) {
            Ok(s) => out.push(s),
            Err(RecorderError::Rejected(id)) => log::info!("skipping trace {id}: {}", t.review.status),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

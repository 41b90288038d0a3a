//! The agent loop: observe, prompt, parse, ground, act.

mod llm;
mod prompt;

use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use llm::{
    ChatMessage, ContentPart, EndpointError, HttpChatClient, LlmClient, ModelEndpoint, RandomClient, Role, ScriptedClient,
};
pub use prompt::{build_prompt, fill, render_history, HistoryEntry, PromptError, PromptPayload, Templates};

use crate::actions::{ground, parse_model_action, serialize_action, Action, GroundedAction};
use crate::device::{Device, DeviceError, Observation};
use crate::evaluation::TaskSpec;
use crate::som::{render_som, SomImage};
use crate::ui_tree::{compress, screen_changed, CompressedView};

/// Consecutive unparseable replies that end an episode.
pub const PARSE_STRIKES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Xml,
    Som,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    #[default]
    Direct,
    React,
    Seeact,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "xml" => Ok(Mode::Xml),
            "som" => Ok(Mode::Som),
            other => Err(format!("unknown mode {other:?} (expected xml or som)")),
        }
    }
}

impl FromStr for Framework {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Framework::Direct),
            "react" => Ok(Framework::React),
            "seeact" => Ok(Framework::Seeact),
            other => Err(format!("unknown framework {other:?} (expected direct, react or seeact)")),
        }
    }
}

fn default_max_steps() -> usize {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub mode: Mode,
    pub framework: Framework,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    pub model: ModelEndpoint,
    /// Most recent steps shown to the model; all of them when unset.
    pub history_window: Option<usize>,
    /// Directory of template files overriding the built-in ones.
    pub templates_dir: Option<PathBuf>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Xml,
            framework: Framework::Direct,
            max_steps: default_max_steps(),
            model: ModelEndpoint::default(),
            history_window: None,
            templates_dir: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps < 1 {
            return Err("max_steps must be at least 1".into());
        }
        if self.history_window == Some(0) {
            return Err("history_window must be at least 1 when set".into());
        }
        Ok(())
    }

    pub fn templates(&self) -> std::io::Result<Templates> {
        match &self.templates_dir {
            Some(dir) => Templates::load(dir),
            None => Ok(Templates::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Finished,
    StepCap,
    ParseFailure,
    DeviceError,
    EndpointError,
}

#[derive(Debug, Clone)]
pub struct Step {
    pub step_index: usize,
    pub pre_observation: Arc<Observation>,
    pub compressed: Arc<CompressedView>,
    /// The annotated screenshot shown in som mode.
    pub som: Option<Arc<SomImage>>,
    /// Full reply; both rounds joined by a newline for two-round prompting.
    pub model_raw: String,
    pub action: Action,
    /// Absent when the action named an element that does not exist.
    pub grounded: Option<GroundedAction>,
    /// Equal to the pre-observation for Finish and for steps that failed
    /// before reaching the device.
    pub post_observation: Arc<Observation>,
    pub changed_screen: bool,
    /// Why the action had no effect, if it failed.
    pub error: Option<String>,
}

impl Step {
    pub fn history_entry(&self) -> HistoryEntry {
        HistoryEntry { step_index: self.step_index, action: serialize_action(&self.action), changed_screen: self.changed_screen }
    }
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub task_id: String,
    pub steps: Vec<Step>,
    /// Present only when the last action is Finish with an answer.
    pub finish_answer: Option<String>,
    pub termination: Termination,
    /// Replies that contained no action.
    pub unparsed_replies: usize,
    pub error: Option<String>,
}

impl Trace {
    pub fn last_observation(&self) -> Option<&Arc<Observation>> {
        self.steps.last().map(|s| &s.post_observation)
    }
}

fn observe(device: &mut dyn Device, mode: Mode) -> Result<Arc<Observation>, DeviceError> {
    device.observe(mode == Mode::Som).map(Arc::new)
}

fn annotate(obs: &Observation, view: &CompressedView) -> Result<SomImage, String> {
    let shot = obs.screenshot.as_ref().ok_or("device returned no screenshot")?;
    let rgba = shot.to_rgba().map_err(|e| e.to_string())?;
    render_som(&rgba, view).map_err(|e| e.to_string())
}

/// Runs one episode on a device already reset to the task's start state.
pub fn run_episode(
    cfg: &EpisodeConfig,
    templates: &Templates,
    task: &TaskSpec,
    device: &mut dyn Device,
    llm: &dyn LlmClient,
) -> Trace {
    let mut trace = Trace {
        task_id: task.task_id.clone(),
        steps: Vec::new(),
        finish_answer: None,
        termination: Termination::StepCap,
        unparsed_replies: 0,
        error: None,
    };
    let stop = |trace: &mut Trace, termination, error: String| {
        trace.termination = termination;
        trace.error = Some(error);
    };
    let mut obs = match observe(device, cfg.mode) {
        Ok(o) => o,
        Err(e) => {
            stop(&mut trace, Termination::DeviceError, e.to_string());
            return trace;
        }
    };
    let mut strikes = 0;
    while trace.steps.len() < cfg.max_steps {
        let view = Arc::new(compress(&obs.tree));
        let som = match cfg.mode {
            Mode::Xml => None,
            Mode::Som => match annotate(&obs, &view) {
                Ok(s) => Some(Arc::new(s)),
                Err(e) => {
                    stop(&mut trace, Termination::DeviceError, format!("screenshot: {e}"));
                    return trace;
                }
            },
        };
        let history: Vec<HistoryEntry> = trace.steps.iter().map(Step::history_entry).collect();
        let payload = match build_prompt(cfg, templates, &task.instruction, &history, &view, som.as_deref(), strikes > 0) {
            Ok(p) => p,
            Err(e) => {
                stop(&mut trace, Termination::DeviceError, e.to_string());
                return trace;
            }
        };
        log::debug!("step {} prompt: {:?}", trace.steps.len(), payload.messages.last().map(ChatMessage::joined_text));
        let reply = match llm.complete(&payload.messages) {
            Ok(r) => r,
            Err(e) => {
                stop(&mut trace, Termination::EndpointError, e.to_string());
                return trace;
            }
        };
        let (model_raw, actionable) = match payload.second_round(&reply) {
            None => (reply.clone(), reply),
            Some(messages) => match llm.complete(&messages) {
                Ok(second) => (format!("{reply}\n{second}"), second),
                Err(e) => {
                    stop(&mut trace, Termination::EndpointError, e.to_string());
                    return trace;
                }
            },
        };
        log::debug!("step {} reply: {model_raw}", trace.steps.len());
        let action = match parse_model_action(&actionable) {
            Ok(a) => a,
            Err(e) => {
                trace.unparsed_replies += 1;
                strikes += 1;
                if strikes >= PARSE_STRIKES {
                    stop(&mut trace, Termination::ParseFailure, format!("{PARSE_STRIKES} consecutive unparseable replies; last: {e}"));
                    return trace;
                }
                continue;
            }
        };
        strikes = 0;
        let step_index = trace.steps.len();
        if let Action::Finish { answer } = &action {
            trace.finish_answer = answer.clone();
            trace.steps.push(Step {
                step_index,
                pre_observation: obs.clone(),
                compressed: view,
                som,
                model_raw,
                grounded: Some(GroundedAction::Done { answer: answer.clone() }),
                action,
                post_observation: obs,
                changed_screen: false,
                error: None,
            });
            trace.termination = Termination::Finished;
            return trace;
        }
        let mut step = Step {
            step_index,
            pre_observation: obs.clone(),
            compressed: view.clone(),
            som,
            model_raw,
            action,
            grounded: None,
            post_observation: obs.clone(),
            changed_screen: false,
            error: None,
        };
        let grounded = match ground(&step.action, &view, device.screen()) {
            Ok(g) => g,
            Err(e) => {
                step.error = Some(e.to_string());
                trace.steps.push(step);
                continue;
            }
        };
        step.grounded = Some(grounded.clone());
        if let Err(e) = device.perform(&grounded) {
            if !e.is_action_level() {
                step.error = Some(e.to_string());
                trace.steps.push(step);
                stop(&mut trace, Termination::DeviceError, e.to_string());
                return trace;
            }
            step.error = Some(e.to_string());
        }
        let post = match observe(device, cfg.mode) {
            Ok(p) => p,
            Err(e) => {
                step.error = Some(e.to_string());
                trace.steps.push(step);
                stop(&mut trace, Termination::DeviceError, e.to_string());
                return trace;
            }
        };
        step.changed_screen = screen_changed(&obs.tree, &post.tree);
        step.post_observation = post.clone();
        trace.steps.push(step);
        obs = post;
    }
    trace.termination = Termination::StepCap;
    trace
}

#[cfg(test)]
mod tests;

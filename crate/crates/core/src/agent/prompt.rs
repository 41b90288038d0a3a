//! Prompt templates and payload assembly.

use std::path::Path;

use super::llm::{ChatMessage, ContentPart, Role};
use super::{EpisodeConfig, Framework, Mode};
use crate::som::SomImage;
use crate::ui_tree::CompressedView;

/// Every prompt template. Placeholders are written `{name}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    /// Slots: `{observation_format}`.
    pub system: String,
    pub observation_xml: String,
    pub observation_som: String,
    /// Slots: `{instruction}`, `{history}`, `{observation}`.
    pub user: String,
    pub react: String,
    pub seeact_describe: String,
    pub seeact_ground: String,
    pub retry: String,
    /// Slots: `{instruction}`, `{gold}`, `{predicted}`.
    pub judge: String,
    /// Slots: `{app}`, `{seeds}`, `{n}`.
    pub expand: String,
}

const FILES: [&str; 10] = [
    "system.txt",
    "observation_xml.txt",
    "observation_som.txt",
    "user.txt",
    "react.txt",
    "seeact_describe.txt",
    "seeact_ground.txt",
    "retry.txt",
    "judge.txt",
    "expand.txt",
];

impl Default for Templates {
    fn default() -> Self {
        Self {
            system: include_str!("../../templates/system.txt").into(),
            observation_xml: include_str!("../../templates/observation_xml.txt").into(),
            observation_som: include_str!("../../templates/observation_som.txt").into(),
            user: include_str!("../../templates/user.txt").into(),
            react: include_str!("../../templates/react.txt").into(),
            seeact_describe: include_str!("../../templates/seeact_describe.txt").into(),
            seeact_ground: include_str!("../../templates/seeact_ground.txt").into(),
            retry: include_str!("../../templates/retry.txt").into(),
            judge: include_str!("../../templates/judge.txt").into(),
            expand: include_str!("../../templates/expand.txt").into(),
        }
    }
}

impl Templates {
    /// Built-in templates, with any same-named file in `dir` taking precedence.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let mut t = Templates::default();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            *t.slot_mut(name) = text;
        }
        Ok(t)
    }

    fn slot_mut(&mut self, file: &str) -> &mut String {
        match file {
            "system.txt" => &mut self.system,
            "observation_xml.txt" => &mut self.observation_xml,
            "observation_som.txt" => &mut self.observation_som,
            "user.txt" => &mut self.user,
            "react.txt" => &mut self.react,
            "seeact_describe.txt" => &mut self.seeact_describe,
            "seeact_ground.txt" => &mut self.seeact_ground,
            "retry.txt" => &mut self.retry,
            "judge.txt" => &mut self.judge,
            _ => &mut self.expand,
        }
    }
}

/// Substitutes `{key}` slots. Unknown slots are left as written.
pub fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in slots {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// One prior step as the model sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub step_index: usize,
    pub action: String,
    pub changed_screen: bool,
}

pub fn render_history(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        return "(none)".to_string();
    }
    history
        .iter()
        .map(|h| {
            let effect = if h.changed_screen { "screen changed" } else { "screen unchanged" };
            format!("Step {}: {} ({effect})", h.step_index, h.action)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPayload {
    pub messages: Vec<ChatMessage>,
    /// Second-round user message. When present, the first reply is appended
    /// as an assistant turn followed by this text, and the model is called
    /// again.
    pub followup: Option<String>,
}

impl PromptPayload {
    pub fn image_count(&self) -> usize {
        self.messages.iter().map(ChatMessage::image_count).sum()
    }

    /// Messages for the second round, given the first reply.
    pub fn second_round(&self, first_reply: &str) -> Option<Vec<ChatMessage>> {
        let followup = self.followup.as_ref()?;
        let mut messages = self.messages.clone();
        messages.push(ChatMessage::text(Role::Assistant, first_reply));
        messages.push(ChatMessage::text(Role::User, followup.clone()));
        Some(messages)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("som mode needs an annotated screenshot")]
    MissingScreenshot,
}

/// Builds the request for one step. `retry` adds a format reminder after an
/// unparseable reply.
pub fn build_prompt(
    cfg: &EpisodeConfig,
    templates: &Templates,
    instruction: &str,
    history: &[HistoryEntry],
    current: &CompressedView,
    som: Option<&SomImage>,
    retry: bool,
) -> Result<PromptPayload, PromptError> {
    let window = match cfg.history_window {
        Some(k) => &history[history.len().saturating_sub(k)..],
        None => history,
    };
    let (format, observation) = match cfg.mode {
        Mode::Xml => (&templates.observation_xml, current.text_rendering.trim_end().to_string()),
        Mode::Som => (&templates.observation_som, "(see the attached screenshot)".to_string()),
    };
    let system = fill(&templates.system, &[("observation_format", format.trim_end())]);
    let mut user = fill(
        &templates.user,
        &[("instruction", instruction), ("history", &render_history(window)), ("observation", &observation)],
    );
    let mut followup = None;
    match cfg.framework {
        Framework::Direct => {}
        Framework::React => {
            user.push('\n');
            user.push_str(&templates.react);
        }
        Framework::Seeact => {
            user.push('\n');
            user.push_str(&templates.seeact_describe);
            followup = Some(templates.seeact_ground.clone());
        }
    }
    if retry {
        user.push('\n');
        user.push_str(&templates.retry);
    }
    let mut parts = vec![ContentPart::Text(user)];
    if cfg.mode == Mode::Som {
        let som = som.ok_or(PromptError::MissingScreenshot)?;
        parts.push(ContentPart::Image(som.png.clone()));
    }
    Ok(PromptPayload {
        messages: vec![ChatMessage::text(Role::System, system), ChatMessage { role: Role::User, parts }],
        followup,
    })
}

//! Task definitions, sub-goal checking and answer judging.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::actions::parse_model_action;
use crate::agent::{fill, ChatMessage, EndpointError, LlmClient, Role, Step, Templates, Termination, Trace};
use crate::device::Observation;
use crate::ui_tree::NodePredicate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Operation,
    Query,
}

/// A key-value assertion on the simulated app's state. `path` is dotted and
/// relative to the task app's state; a `*` segment matches any list entry
/// or map value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateProbe {
    pub path: String,
    pub equals: Value,
}

impl StateProbe {
    pub fn holds(&self, app_state: &Value) -> bool {
        let segments: Vec<&str> = self.path.split('.').filter(|s| !s.is_empty()).collect();
        probe(app_state, &segments, &self.equals)
    }
}

fn probe(v: &Value, segments: &[&str], want: &Value) -> bool {
    let Some((head, rest)) = segments.split_first() else {
        return v == want;
    };
    match (*head, v) {
        ("*", Value::Array(items)) => items.iter().any(|i| probe(i, rest, want)),
        ("*", Value::Object(map)) => map.values().any(|i| probe(i, rest, want)),
        (key, Value::Object(map)) => map.get(key).is_some_and(|i| probe(i, rest, want)),
        (key, Value::Array(items)) => key.parse::<usize>().ok().and_then(|i| items.get(i)).is_some_and(|i| probe(i, rest, want)),
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubGoalSpec {
    pub name: String,
    /// A sub-goal that must already be satisfied before this one can be.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordered_after: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<NodePredicate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<StateProbe>,
}

impl SubGoalSpec {
    /// Whether the observation meets the condition. State probes never hold
    /// on a device without simulator state.
    pub fn holds(&self, app: &str, obs: &Observation) -> bool {
        if let Some(p) = &self.predicate {
            if !p.is_satisfied_by(&obs.tree) {
                return false;
            }
        }
        if let Some(s) = &self.state {
            match obs.device_state.as_ref().and_then(|d| d.get(app)) {
                Some(app_state) if s.holds(app_state) => {}
                _ => return false,
            }
        }
        self.predicate.is_some() || self.state.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    /// Start app: a simulator app id or an Android package.
    pub app: String,
    pub instruction: String,
    pub kind: TaskKind,
    /// Length of the reference path, counting the final finish().
    pub human_steps: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_fixture: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answer: Option<String>,
    /// Reference action script, used by the oracle agent.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gold_actions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_goals: Vec<SubGoalSpec>,
}

/// A structural defect in a task. `anchor` is source text near the defect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskProblem {
    pub message: String,
    pub anchor: Option<String>,
}

impl TaskProblem {
    fn new(message: impl Into<String>, anchor: Option<String>) -> Self {
        Self { message: message.into(), anchor }
    }
}

impl TaskSpec {
    pub fn from_toml(text: &str) -> Result<TaskSpec, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<TaskSpec, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        TaskSpec::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn problems(&self) -> Vec<TaskProblem> {
        let mut out = Vec::new();
        let quoted = |s: &str| Some(format!("\"{s}\""));
        if self.task_id.trim().is_empty() {
            out.push(TaskProblem::new("task_id is empty", Some("task_id".into())));
        }
        if self.app.trim().is_empty() {
            out.push(TaskProblem::new("app is empty", Some("app".into())));
        }
        if self.human_steps < 1 {
            out.push(TaskProblem::new("human_steps must be at least 1", Some("human_steps".into())));
        }
        match self.kind {
            TaskKind::Operation if self.sub_goals.is_empty() => {
                out.push(TaskProblem::new("operation task has no sub_goals", Some("kind".into())))
            }
            TaskKind::Query if self.gold_answer.as_deref().is_none_or(|a| a.trim().is_empty()) => {
                out.push(TaskProblem::new("query task has no gold_answer", Some("kind".into())))
            }
            _ => {}
        }
        let mut earlier = BTreeSet::new();
        for g in &self.sub_goals {
            if let Some(parent) = &g.ordered_after {
                if !earlier.contains(parent.as_str()) {
                    out.push(TaskProblem::new(
                        format!("sub-goal {:?} is ordered after {parent:?}, which is not an earlier sub-goal", g.name),
                        quoted(parent),
                    ));
                }
            }
            if !earlier.insert(g.name.as_str()) {
                out.push(TaskProblem::new(format!("sub-goal name {:?} is repeated", g.name), quoted(&g.name)));
            }
            match (&g.predicate, &g.state) {
                (None, None) => out.push(TaskProblem::new(format!("sub-goal {:?} has neither predicate nor state", g.name), quoted(&g.name))),
                (Some(p), _) => {
                    if p.is_trivial() {
                        out.push(TaskProblem::new(format!("sub-goal {:?} has an empty predicate", g.name), quoted(&g.name)));
                    }
                    if let Err(e) = p.compiled_regex() {
                        out.push(TaskProblem::new(format!("sub-goal {:?}: bad text_regex: {e}", g.name), quoted(&g.name)));
                    }
                }
                _ => {}
            }
        }
        for (i, a) in self.gold_actions.iter().enumerate() {
            if let Err(e) = parse_model_action(a) {
                out.push(TaskProblem::new(format!("gold action {i} does not parse: {e}"), Some(a.clone())));
            }
        }
        if let Some(last) = self.gold_actions.last() {
            if parse_model_action(last).is_ok_and(|a| !a.is_finish()) {
                out.push(TaskProblem::new("gold_actions must end with finish()", Some(last.clone())));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubGoalFlag {
    pub name: String,
    pub satisfied_at_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task_id: String,
    pub app: String,
    pub kind: TaskKind,
    pub human_steps: u32,
    pub completed: bool,
    #[serde(default)]
    pub sub_goal_flags: Vec<SubGoalFlag>,
    #[serde(default)]
    pub answer_correct: Option<bool>,
    pub steps_taken: usize,
    /// Screen-change flag of every performed action; Finish is excluded.
    pub changed_flags: Vec<bool>,
    pub termination: Termination,
    #[serde(default)]
    pub finish_answer: Option<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl EvalResult {
    pub fn satisfied_sub_goals(&self) -> usize {
        self.sub_goal_flags.iter().filter(|f| f.satisfied_at_step.is_some()).count()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("judge reply must begin with CORRECT or INCORRECT, got {0:?}")]
    JudgeReply(String),
}

/// Sub-goal status over a sequence of post-action observations, given as
/// `(step_index, observation)` in step order.
pub fn check_subgoals_over<'a, I>(task: &TaskSpec, observations: I) -> Vec<SubGoalFlag>
where
    I: IntoIterator<Item = (usize, &'a Observation)>,
{
    let mut flags: Vec<SubGoalFlag> =
        task.sub_goals.iter().map(|g| SubGoalFlag { name: g.name.clone(), satisfied_at_step: None }).collect();
    for (step, obs) in observations {
        for (i, goal) in task.sub_goals.iter().enumerate() {
            if flags[i].satisfied_at_step.is_some() {
                continue;
            }
            let parent_done = match &goal.ordered_after {
                None => true,
                Some(p) => flags[..i].iter().any(|f| &f.name == p && f.satisfied_at_step.is_some()),
            };
            if parent_done && goal.holds(&task.app, obs) {
                flags[i].satisfied_at_step = Some(step);
            }
        }
    }
    flags
}

/// Checks sub-goals against each performed step's post-observation. Finish
/// steps are skipped: their observation is the previous step's.
pub fn check_subgoals(task: &TaskSpec, trace: &Trace) -> Vec<SubGoalFlag> {
    check_subgoals_over(
        task,
        trace.steps.iter().filter(|s| !s.action.is_finish()).map(|s: &Step| (s.step_index, s.post_observation.as_ref())),
    )
}

const STOPWORDS: [&str; 14] = ["a", "an", "and", "the", "is", "it", "its", "of", "about", "around", "approximately", "on", "at", "are"];

fn canonical_unit(word: &str) -> Option<&'static str> {
    Some(match word {
        "km" | "kilometer" | "kilometers" | "kilometre" | "kilometres" => "km",
        "m" | "meter" | "meters" | "metre" | "metres" => "m",
        "mi" | "mile" | "miles" => "mi",
        "min" | "mins" | "minute" | "minutes" => "min",
        "h" | "hr" | "hrs" | "hour" | "hours" => "h",
        "s" | "sec" | "secs" | "second" | "seconds" => "s",
        "percent" => "%",
        _ => return None,
    })
}

fn canonical_word(word: &str) -> String {
    const MONTHS: [&str; 12] = ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"];
    if word.len() >= 3 {
        let (head, _) = word.split_at(3);
        if let Some(m) = MONTHS.iter().find(|m| **m == head) {
            let full = [
                "january", "february", "march", "april", "may", "june", "july", "august", "september", "october", "november",
                "december",
            ];
            let i = MONTHS.iter().position(|x| x == m).unwrap();
            if word == *m || word == full[i] || (i == 8 && word == "sept") {
                return m.to_string();
            }
        }
    }
    word.to_string()
}

/// Lowercase, punctuation to spaces (decimal points survive), single spaces.
pub fn normalize_answer(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            out.extend(c.to_lowercase());
        } else if c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())
        {
            out.push('.');
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Numbers (with any unit that follows) and the remaining content words.
fn answer_facts(normalized: &str) -> (Vec<(String, Option<&'static str>)>, BTreeSet<String>) {
    let mut tokens = Vec::new();
    for word in normalized.split(' ') {
        let mut cur = String::new();
        let mut numeric = None;
        for c in word.chars() {
            let is_num = c.is_ascii_digit() || c == '.';
            if numeric.is_some_and(|n| n != is_num) {
                tokens.push(std::mem::take(&mut cur));
            }
            numeric = Some(is_num);
            cur.push(c);
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
    }
    let mut numbers = Vec::new();
    let mut words = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        let t = &tokens[i];
        if let Ok(n) = t.parse::<f64>() {
            let unit = tokens.get(i + 1).and_then(|u| canonical_unit(u));
            if unit.is_some() {
                i += 1;
            }
            numbers.push((format!("{n}"), unit));
        } else if !STOPWORDS.contains(&t.as_str()) {
            words.insert(canonical_word(t));
        }
        i += 1;
    }
    numbers.sort();
    (numbers, words)
}

/// The judge-free comparison: equal normalized text, or equal number-unit
/// multisets with every other gold word present in the prediction.
pub fn answers_match(gold: &str, predicted: &str) -> bool {
    let (g, p) = (normalize_answer(gold), normalize_answer(predicted));
    if g == p {
        return true;
    }
    let (gn, gw) = answer_facts(&g);
    let (pn, pw) = answer_facts(&p);
    !gn.is_empty() && gn == pn && gw.is_subset(&pw)
}

/// Judges a query answer. The deterministic comparison runs first; the judge
/// model is consulted only when it fails.
pub fn judge_query(
    gold: &str,
    predicted: Option<&str>,
    instruction: &str,
    judge: Option<(&dyn LlmClient, &Templates)>,
) -> Result<bool, EvalError> {
    let Some(predicted) = predicted else {
        return Ok(false);
    };
    if answers_match(gold, predicted) {
        return Ok(true);
    }
    let Some((llm, templates)) = judge else {
        return Ok(false);
    };
    let prompt = fill(&templates.judge, &[("instruction", instruction), ("gold", gold), ("predicted", predicted)]);
    let reply = llm.complete(&[ChatMessage::text(Role::User, prompt)])?;
    let head = reply.trim_start().to_ascii_uppercase();
    if head.starts_with("CORRECT") {
        Ok(true)
    } else if head.starts_with("INCORRECT") {
        Ok(false)
    } else {
        Err(EvalError::JudgeReply(reply))
    }
}

pub fn evaluate(task: &TaskSpec, trace: &Trace, judge: Option<(&dyn LlmClient, &Templates)>) -> Result<EvalResult, EvalError> {
    let (sub_goal_flags, answer_correct, completed) = match task.kind {
        TaskKind::Operation => {
            let flags = check_subgoals(task, trace);
            let done = !flags.is_empty() && flags.iter().all(|f| f.satisfied_at_step.is_some());
            (flags, None, done)
        }
        TaskKind::Query => {
            let gold = task.gold_answer.as_deref().unwrap_or_default();
            let ok = judge_query(gold, trace.finish_answer.as_deref(), &task.instruction, judge)?;
            (Vec::new(), Some(ok), ok)
        }
    };
    Ok(EvalResult {
        task_id: task.task_id.clone(),
        app: task.app.clone(),
        kind: task.kind,
        human_steps: task.human_steps,
        completed,
        sub_goal_flags,
        answer_correct,
        steps_taken: trace.steps.len(),
        changed_flags: trace.steps.iter().filter(|s| !s.action.is_finish()).map(|s| s.changed_screen).collect(),
        termination: trace.termination,
        finish_answer: trace.finish_answer.clone(),
        error: trace.error.clone(),
    })
}

#[cfg(test)]
mod tests;

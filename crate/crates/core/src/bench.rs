//! Suite orchestration: load tasks, run episodes, persist traces and results,
//! aggregate a report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{serialize_action, GroundedAction};
use crate::agent::{
    run_episode, EndpointError, EpisodeConfig, HttpChatClient, LlmClient, ModelEndpoint, RandomClient, ScriptedClient, Termination, Trace,
};
use crate::device::{self, Backend, DeviceConfig, SimApp};
use crate::evaluation::{evaluate, EvalResult, TaskSpec};
use crate::metrics::{compute_report, render, MetricsReport, ReportFormat};
use crate::util::{fnv1a, now_ms, write_atomic};

/// Which policy drives the episodes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AgentSpec {
    /// The configured model endpoint.
    #[default]
    Llm,
    /// Replays each task's gold action script.
    Oracle,
    /// Uniform-random actions; each task's seed is derived from this one.
    Random { seed: u64 },
}

fn default_parallelism() -> usize {
    1
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/latest")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    /// A task file or a directory of them.
    pub tasks: PathBuf,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub agent: AgentSpec,
    /// Model that judges query answers the exact comparison rejects.
    #[serde(default)]
    pub judge: Option<ModelEndpoint>,
}

impl SuiteConfig {
    pub fn new(tasks: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            tasks: tasks.into(),
            episode: EpisodeConfig::default(),
            device: DeviceConfig::default(),
            parallelism: 1,
            output_dir: output_dir.into(),
            resume: false,
            agent: AgentSpec::default(),
            judge: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.parallelism < 1 {
            return Err(BenchError::Config("parallelism must be at least 1".into()));
        }
        if self.device.backend == Backend::Adb && self.parallelism > 1 {
            return Err(BenchError::Config("the adb backend drives one device; parallelism must be 1".into()));
        }
        self.episode.validate().map_err(BenchError::Config)?;
        self.device.validate().map_err(|e| BenchError::Config(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("task suite has problems:\n{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    InvalidSuite(Vec<Diagnostic>),
    #[error("device setup failed: {0}")]
    Device(#[from] device::DeviceError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
    #[error("evaluating {task_id}: {message}")]
    Evaluation { task_id: String, message: String },
    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no results under {0}")]
    NoResults(PathBuf),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |e| BenchError::Io { path: path.to_path_buf(), message: e.to_string() }
}

/// A problem in a task file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.file.display(), self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

/// Task files under `path`, sorted by name.
pub fn task_files(path: &Path) -> Result<Vec<PathBuf>, BenchError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

fn line_of(text: &str, byte: usize) -> usize {
    text[..byte.min(text.len())].matches('\n').count() + 1
}

fn anchor_line(text: &str, anchor: &str) -> Option<usize> {
    text.find(anchor).map(|b| line_of(text, b))
}

/// Schema and consistency problems across a suite. `apps` enables checks of
/// app ids and fixtures against a simulator registry.
pub fn validate_suite(path: &Path, apps: Option<&[SimApp]>) -> Vec<Diagnostic> {
    match load_checked(path, apps) {
        Ok(_) => Vec::new(),
        Err(d) => d,
    }
}

fn load_checked(path: &Path, apps: Option<&[SimApp]>) -> Result<Vec<TaskSpec>, Vec<Diagnostic>> {
    let files = match task_files(path) {
        Ok(f) => f,
        Err(e) => return Err(vec![Diagnostic { file: path.to_path_buf(), line: None, message: e.to_string() }]),
    };
    if files.is_empty() {
        return Err(vec![Diagnostic { file: path.to_path_buf(), line: None, message: "no .toml task files".into() }]);
    }
    let mut out = Vec::new();
    let mut tasks = Vec::new();
    let mut seen: BTreeMap<String, PathBuf> = BTreeMap::new();
    for file in files {
        let diag = |line, message| Diagnostic { file: file.clone(), line, message };
        let text = match std::fs::read_to_string(&file) {
            Ok(t) => t,
            Err(e) => {
                out.push(diag(None, e.to_string()));
                continue;
            }
        };
        let task = match TaskSpec::from_toml(&text) {
            Ok(t) => t,
            Err(e) => {
                let line = e.span().map(|s| line_of(&text, s.start));
                out.push(diag(line, e.message().to_string()));
                continue;
            }
        };
        for p in task.problems() {
            out.push(diag(p.anchor.as_deref().and_then(|a| anchor_line(&text, a)), p.message));
        }
        if let Some(first) = seen.insert(task.task_id.clone(), file.clone()) {
            out.push(diag(anchor_line(&text, "task_id"), format!("task_id {:?} is also used by {}", task.task_id, first.display())));
        }
        if let Some(apps) = apps {
            match apps.iter().find(|a| a.app_id == task.app || a.package == task.app) {
                None => out.push(diag(anchor_line(&text, "app"), format!("unknown app {:?}", task.app))),
                Some(app) => {
                    if let Some(f) = &task.env_fixture {
                        if !app.fixtures.contains_key(f) {
                            out.push(diag(anchor_line(&text, "env_fixture"), format!("app {:?} has no fixture {f:?}", app.app_id)));
                        }
                    }
                }
            }
        }
        tasks.push(task);
    }
    if out.is_empty() {
        Ok(tasks)
    } else {
        Err(out)
    }
}

/// Loads a suite, failing on any diagnostic.
pub fn load_suite(path: &Path, apps: Option<&[SimApp]>) -> Result<Vec<TaskSpec>, BenchError> {
    load_checked(path, apps).map_err(BenchError::InvalidSuite)
}

/// One line of `trace.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum TraceLine {
    Step {
        step_index: usize,
        action: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grounded: Option<GroundedAction>,
        model_raw: String,
        changed_screen: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        pre_xml: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pre_screenshot: Option<String>,
        post_xml: String,
        capture_timestamp: i64,
    },
    End {
        termination: Termination,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        finish_answer: Option<String>,
        unparsed_replies: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
}

/// Writes `steps/` captures and `trace.jsonl` for one episode.
pub fn persist_trace(dir: &Path, trace: &Trace) -> Result<Vec<TraceLine>, BenchError> {
    let steps_dir = dir.join("steps");
    std::fs::create_dir_all(&steps_dir).map_err(io_err(&steps_dir))?;
    let mut lines = Vec::new();
    for s in &trace.steps {
        let pre_xml = format!("steps/{:03}.xml", s.step_index);
        std::fs::write(dir.join(&pre_xml), &s.pre_observation.xml).map_err(io_err(dir))?;
        let pre_screenshot = match &s.som {
            Some(som) => {
                let name = format!("steps/{:03}.png", s.step_index);
                std::fs::write(dir.join(&name), &som.png).map_err(io_err(dir))?;
                Some(name)
            }
            None => None,
        };
        let post_xml = if std::sync::Arc::ptr_eq(&s.pre_observation, &s.post_observation) {
            pre_xml.clone()
        } else {
            let name = format!("steps/{:03}.xml", s.step_index + 1);
            std::fs::write(dir.join(&name), &s.post_observation.xml).map_err(io_err(dir))?;
            name
        };
        lines.push(TraceLine::Step {
            step_index: s.step_index,
            action: serialize_action(&s.action),
            grounded: s.grounded.clone(),
            model_raw: s.model_raw.clone(),
            changed_screen: s.changed_screen,
            error: s.error.clone(),
            pre_xml,
            pre_screenshot,
            post_xml,
            capture_timestamp: s.pre_observation.capture_timestamp,
        });
    }
    lines.push(TraceLine::End {
        termination: trace.termination,
        finish_answer: trace.finish_answer.clone(),
        unparsed_replies: trace.unparsed_replies,
        error: trace.error.clone(),
    });
    let mut body = String::new();
    for l in &lines {
        body.push_str(&serde_json::to_string(l).expect("trace line serializes"));
        body.push('\n');
    }
    let path = dir.join("trace.jsonl");
    write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
    Ok(lines)
}

pub fn read_trace_lines(path: &Path) -> Result<Vec<TraceLine>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| BenchError::Io { path: path.to_path_buf(), message: e.to_string() }))
        .collect()
}

fn read_result(path: &Path) -> Option<EvalResult> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Results persisted under a run directory, sorted by task id.
pub fn load_results(output_dir: &Path) -> Result<Vec<EvalResult>, BenchError> {
    let mut out = Vec::new();
    let entries = match std::fs::read_dir(output_dir) {
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(BenchError::NoResults(output_dir.to_path_buf())),
        other => other.map_err(io_err(output_dir))?,
    };
    for entry in entries {
        let Ok(entry) = entry else { continue };
        if let Some(r) = read_result(&entry.path().join("result.json")) {
            out.push(r);
        }
    }
    if out.is_empty() {
        return Err(BenchError::NoResults(output_dir.to_path_buf()));
    }
    out.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(out)
}

/// Report over the results persisted under a run directory.
pub fn report_from_dir(output_dir: &Path) -> Result<MetricsReport, BenchError> {
    let results = load_results(output_dir)?;
    compute_report(&results).map_err(|e| BenchError::Config(e.to_string()))
}

fn device_failure(task: &TaskSpec, message: String) -> EvalResult {
    EvalResult {
        task_id: task.task_id.clone(),
        app: task.app.clone(),
        kind: task.kind,
        human_steps: task.human_steps,
        completed: false,
        sub_goal_flags: task
            .sub_goals
            .iter()
            .map(|g| crate::evaluation::SubGoalFlag { name: g.name.clone(), satisfied_at_step: None })
            .collect(),
        answer_correct: task.gold_answer.as_ref().map(|_| false),
        steps_taken: 0,
        changed_flags: Vec::new(),
        termination: Termination::DeviceError,
        finish_answer: None,
        error: Some(message),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub report: MetricsReport,
    pub results: Vec<EvalResult>,
    /// Tasks executed in this invocation (the rest were resumed).
    pub executed: Vec<String>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    started_ms: i64,
    finished_ms: i64,
    agent: &'a AgentSpec,
    mode: crate::agent::Mode,
    framework: crate::agent::Framework,
    max_steps: usize,
    backend: Backend,
    executed: &'a [String],
}

/// Builds the policy for one task.
pub type AgentFactory<'a> = dyn Fn(&TaskSpec) -> Box<dyn LlmClient> + Sync + 'a;

/// Called after each task finishes.
pub type ProgressHook<'a> = dyn Fn(&EvalResult) + Sync + 'a;

/// Runs the suite with the agent named in the config.
pub fn run_suite(cfg: &SuiteConfig, progress: Option<&ProgressHook>) -> Result<SuiteOutcome, BenchError> {
    let shared: Option<std::sync::Arc<HttpChatClient>> = match cfg.agent {
        AgentSpec::Llm => Some(std::sync::Arc::new(HttpChatClient::new(cfg.episode.model.clone())?)),
        _ => None,
    };
    let factory = |task: &TaskSpec| -> Box<dyn LlmClient> {
        match &cfg.agent {
            AgentSpec::Oracle => Box::new(ScriptedClient::new(task.gold_actions.clone())),
            AgentSpec::Random { seed } => Box::new(RandomClient::new(seed ^ fnv1a(task.task_id.as_bytes()))),
            AgentSpec::Llm => Box::new(Shared(shared.clone().expect("llm client built above"))),
        }
    };
    let judge = match &cfg.judge {
        Some(endpoint) => Some(HttpChatClient::new(endpoint.clone())?),
        None => None,
    };
    run_suite_with(cfg, &factory, judge.as_ref().map(|j| j as &dyn LlmClient), progress)
}

struct Shared(std::sync::Arc<HttpChatClient>);

impl LlmClient for Shared {
    fn complete(&self, messages: &[crate::agent::ChatMessage]) -> Result<String, EndpointError> {
        self.0.complete(messages)
    }
}

pub fn run_suite_with(
    cfg: &SuiteConfig,
    agent: &AgentFactory,
    judge: Option<&dyn LlmClient>,
    progress: Option<&ProgressHook>,
) -> Result<SuiteOutcome, BenchError> {
    cfg.validate()?;
    let started_ms = now_ms();
    let registry = match cfg.device.backend {
        Backend::Sim => Some(device::SimDevice::new(cfg.device.clone())?.apps().to_vec()),
        Backend::Adb => None,
    };
    let tasks = load_suite(&cfg.tasks, registry.as_deref())?;
    let templates = cfg.episode.templates().map_err(io_err(cfg.episode.templates_dir.as_deref().unwrap_or(Path::new("."))))?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(io_err(&cfg.output_dir))?;

    let mut done: BTreeMap<String, EvalResult> = BTreeMap::new();
    let mut pending = Vec::new();
    for task in &tasks {
        let existing = cfg.resume.then(|| read_result(&cfg.output_dir.join(&task.task_id).join("result.json"))).flatten();
        match existing {
            Some(r) => {
                done.insert(task.task_id.clone(), r);
            }
            None => pending.push(task),
        }
    }

    let next = AtomicUsize::new(0);
    let fresh: Mutex<Vec<EvalResult>> = Mutex::new(Vec::new());
    let failure: Mutex<Option<BenchError>> = Mutex::new(None);
    let workers = cfg.parallelism.min(pending.len()).max(1);
    let judge_pair = judge.map(|j| (j, &templates));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut dev = match device::setup(&cfg.device) {
                    Ok(d) => d,
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(BenchError::Device(e));
                        return;
                    }
                };
                loop {
                    if failure.lock().unwrap().is_some() {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(task) = pending.get(i) else { return };
                    let dir = cfg.output_dir.join(&task.task_id);
                    let result = match dev.reset(&task.app, task.env_fixture.as_deref()) {
                        Err(e) => device_failure(task, format!("reset: {e}")),
                        Ok(()) => {
                            let llm = agent(task);
                            let trace = run_episode(&cfg.episode, &templates, task, dev.as_mut(), llm.as_ref());
                            if let Err(e) = persist_trace(&dir, &trace) {
                                failure.lock().unwrap().get_or_insert(e);
                                return;
                            }
                            match evaluate(task, &trace, judge_pair) {
                                Ok(r) => r,
                                Err(e) => {
                                    failure.lock().unwrap().get_or_insert(BenchError::Evaluation {
                                        task_id: task.task_id.clone(),
                                        message: e.to_string(),
                                    });
                                    return;
                                }
                            }
                        }
                    };
                    let path = dir.join("result.json");
                    let body = serde_json::to_vec_pretty(&result).expect("result serializes");
                    if let Err(e) = write_atomic(&path, &body) {
                        failure.lock().unwrap().get_or_insert(BenchError::Io { path, message: e.to_string() });
                        return;
                    }
                    if let Some(hook) = progress {
                        hook(&result);
                    }
                    fresh.lock().unwrap().push(result);
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let fresh = fresh.into_inner().unwrap();
    let mut executed: Vec<String> = fresh.iter().map(|r| r.task_id.clone()).collect();
    executed.sort();
    for r in fresh {
        done.insert(r.task_id.clone(), r);
    }
    let results: Vec<EvalResult> = done.into_values().collect();
    let report = compute_report(&results).map_err(|e| BenchError::Config(e.to_string()))?;
    let report_path = cfg.output_dir.join("report.json");
    write_atomic(&report_path, render(&report, ReportFormat::Json).as_bytes()).map_err(io_err(&report_path))?;
    let meta = RunMeta {
        started_ms,
        finished_ms: now_ms(),
        agent: &cfg.agent,
        mode: cfg.episode.mode,
        framework: cfg.episode.framework,
        max_steps: cfg.episode.max_steps,
        backend: cfg.device.backend,
        executed: &executed,
    };
    let meta_path = cfg.output_dir.join("run_meta.json");
    write_atomic(&meta_path, &serde_json::to_vec_pretty(&meta).expect("meta serializes")).map_err(io_err(&meta_path))?;
    Ok(SuiteOutcome { report, results, executed })
}

use std::sync::Mutex;

use super::*;
use crate::device::{DeviceConfig, SimDevice};
use crate::evaluation::{TaskKind, TaskSpec};

fn task() -> TaskSpec {
    TaskSpec {
        task_id: "t".into(),
        app: "clock".into(),
        instruction: "Add an alarm".into(),
        kind: TaskKind::Query,
        human_steps: 1,
        env_fixture: None,
        gold_answer: Some("x".into()),
        gold_actions: Vec::new(),
        sub_goals: Vec::new(),
    }
}

fn clock() -> SimDevice {
    let mut d = SimDevice::new(DeviceConfig::sim().with_step_interval(0.0)).unwrap();
    d.reset("clock", None).unwrap();
    d
}

fn run(cfg: &EpisodeConfig, dev: &mut dyn Device, llm: &dyn LlmClient) -> Trace {
    run_episode(cfg, &Templates::default(), &task(), dev, llm)
}

/// Scripted replies that also keeps every request.
struct Recording {
    inner: ScriptedClient,
    seen: Mutex<Vec<Vec<ChatMessage>>>,
}

impl Recording {
    fn new<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self { inner: ScriptedClient::new(replies), seen: Mutex::new(Vec::new()) }
    }
}

impl LlmClient for Recording {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        self.seen.lock().unwrap().push(messages.to_vec());
        self.inner.complete(messages)
    }
}

#[test]
fn immediate_finish() {
    let t = run(&EpisodeConfig::default(), &mut clock(), &ScriptedClient::new(["finish(answer=\"none\")"]));
    assert_eq!(t.steps.len(), 1);
    assert_eq!(t.termination, Termination::Finished);
    assert_eq!(t.finish_answer.as_deref(), Some("none"));
    assert!(!t.steps[0].changed_screen);
}

#[test]
fn step_cap_stops_at_25() {
    let llm = ScriptedClient::new(vec!["tap(element=0)"; 30]);
    let t = run(&EpisodeConfig::default(), &mut clock(), &llm);
    assert_eq!(t.steps.len(), 25);
    assert_eq!(t.termination, Termination::StepCap);
    assert_eq!(t.finish_answer, None);
    assert_eq!(llm.remaining(), 5);
    assert!(t.steps.iter().enumerate().all(|(i, s)| s.step_index == i));
}

#[test]
fn three_unparseable_replies() {
    let llm = ScriptedClient::new(["hmm", "I am not sure", "let me think", "tap(element=0)"]);
    let t = run(&EpisodeConfig::default(), &mut clock(), &llm);
    assert_eq!(t.termination, Termination::ParseFailure);
    assert!(t.steps.is_empty());
    assert_eq!(t.unparsed_replies, 3);
}

#[test]
fn strikes_reset_after_a_good_reply() {
    let llm = Recording::new(["??", "??", "back()", "??", "??", "finish()"]);
    let t = run(&EpisodeConfig::default(), &mut clock(), &llm);
    assert_eq!(t.termination, Termination::Finished);
    assert_eq!(t.steps.len(), 2);
    assert_eq!(t.unparsed_replies, 4);
    let seen = llm.seen.lock().unwrap();
    let retry = Templates::default().retry;
    assert!(!seen[0][1].joined_text().contains(retry.trim()));
    assert!(seen[1][1].joined_text().contains(retry.trim()));
}

#[test]
fn finish_performs_nothing_further() {
    let llm = ScriptedClient::new(["finish()", "tap(element=8)"]);
    let mut dev = clock();
    let before = dev.state("clock").cloned();
    let t = run(&EpisodeConfig::default(), &mut dev, &llm);
    assert_eq!(t.steps.len(), 1);
    assert_eq!(llm.remaining(), 1);
    assert_eq!(dev.state("clock").cloned(), before);
}

#[test]
fn history_lists_prior_actions() {
    let replies = ["tap(element=8)", "tap(element=1)", "type(text=\"7:30 AM\")", "back()", "finish()"];
    let llm = Recording::new(replies);
    let t = run(&EpisodeConfig::default(), &mut clock(), &llm);
    assert_eq!(t.steps.len(), 5);
    let seen = llm.seen.lock().unwrap();
    for (k, request) in seen.iter().enumerate() {
        let user = request[1].joined_text();
        let lines: Vec<&str> = user.lines().filter(|l| l.starts_with("Step ")).collect();
        assert_eq!(lines.len(), k);
        for (j, line) in lines.iter().enumerate() {
            assert!(line.starts_with(&format!("Step {j}: {}", replies[j])), "{line}");
        }
    }
}

#[test]
fn seeact_makes_two_calls_per_step() {
    let cfg = EpisodeConfig { framework: Framework::Seeact, ..EpisodeConfig::default() };
    let llm = Recording::new(["I should add an alarm with the Add alarm button.", "tap(element=8)", "Done already.", "finish()"]);
    let t = run(&cfg, &mut clock(), &llm);
    assert_eq!(t.steps.len(), 2);
    assert_eq!(t.steps[0].model_raw, "I should add an alarm with the Add alarm button.\ntap(element=8)");
    assert!(t.steps[0].changed_screen);
    let seen = llm.seen.lock().unwrap();
    assert_eq!(seen.len(), 4);
    assert_eq!(seen[1][2].joined_text(), "I should add an alarm with the Add alarm button.");
    // History is shown in both rounds.
    assert!(seen[2][1].joined_text().contains("Step 0: tap(element=8)"));
    assert!(seen[3][1].joined_text().contains("Step 0: tap(element=8)"));
}

#[test]
fn som_mode_sends_annotated_screens() {
    let cfg = EpisodeConfig { mode: Mode::Som, ..EpisodeConfig::default() };
    let llm = Recording::new(["tap(element=8)", "finish()"]);
    let t = run(&cfg, &mut clock(), &llm);
    assert_eq!(t.termination, Termination::Finished);
    for request in llm.seen.lock().unwrap().iter() {
        assert_eq!(request.iter().map(ChatMessage::image_count).sum::<usize>(), 1);
    }
    for s in &t.steps {
        let som = s.som.as_ref().unwrap();
        let legend: Vec<usize> = som.legend.iter().map(|l| l.index).collect();
        let elements: Vec<usize> = s.compressed.elements.iter().map(|e| e.index).collect();
        assert_eq!(legend, elements);
    }
}

#[test]
fn bad_index_and_unfocused_typing_are_ineffective_steps() {
    let llm = ScriptedClient::new(["tap(element=99)", "type(text=\"hi\")", "finish()"]);
    let t = run(&EpisodeConfig::default(), &mut clock(), &llm);
    assert_eq!(t.termination, Termination::Finished);
    assert_eq!(t.steps.len(), 3);
    assert!(t.steps[0].grounded.is_none());
    assert!(t.steps[0].error.as_deref().unwrap().contains("99"));
    assert!(t.steps[1].error.is_some());
    assert!(!t.steps[0].changed_screen && !t.steps[1].changed_screen);
}

#[test]
fn endpoint_failure_keeps_partial_trace() {
    let llm = ScriptedClient::new(["tap(element=8)"]);
    let t = run(&EpisodeConfig::default(), &mut clock(), &llm);
    assert_eq!(t.termination, Termination::EndpointError);
    assert_eq!(t.steps.len(), 1);
    assert!(t.error.is_some());
}

/// Wraps the simulator and fails every action after the first.
struct Flaky {
    inner: SimDevice,
    performed: usize,
}

impl Device for Flaky {
    fn screen(&self) -> (u32, u32) {
        self.inner.screen()
    }
    fn observe(&mut self, s: bool) -> Result<Observation, DeviceError> {
        self.inner.observe(s)
    }
    fn perform(&mut self, a: &GroundedAction) -> Result<(), DeviceError> {
        self.performed += 1;
        if self.performed > 1 {
            return Err(DeviceError::ExecutionFailed { command: "input tap".into(), message: "device offline".into() });
        }
        self.inner.perform(a)
    }
    fn reset(&mut self, app: &str, f: Option<&str>) -> Result<(), DeviceError> {
        self.inner.reset(app, f)
    }
    fn installed_apps(&self) -> Vec<String> {
        self.inner.installed_apps()
    }
}

#[test]
fn device_failure_keeps_partial_trace() {
    let mut dev = Flaky { inner: clock(), performed: 0 };
    let t = run(&EpisodeConfig::default(), &mut dev, &ScriptedClient::repeating("tap(element=0)"));
    assert_eq!(t.termination, Termination::DeviceError);
    assert_eq!(t.steps.len(), 2);
    assert!(t.steps[1].error.as_deref().unwrap().contains("device offline"));
}

#[test]
fn config_parsing() {
    assert_eq!("SoM".parse::<Mode>(), Ok(Mode::Som));
    assert_eq!("seeact".parse::<Framework>(), Ok(Framework::Seeact));
    assert!("cot".parse::<Framework>().is_err());
    let cfg: EpisodeConfig = toml::from_str("mode = \"som\"\nframework = \"react\"").unwrap();
    assert_eq!((cfg.mode, cfg.framework, cfg.max_steps), (Mode::Som, Framework::React, 25));
    assert!(EpisodeConfig { max_steps: 0, ..cfg }.validate().is_err());
}

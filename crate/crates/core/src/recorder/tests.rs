use std::path::Path;

use proptest::prelude::*;

use super::*;
use crate::actions::{ground, parse_model_action, Action};
use crate::agent::{ScriptedClient, Templates};
use crate::device::{self, Device, DeviceConfig, SimDevice};
use crate::som::decode_png;
use TouchKind::*;

fn sim() -> crate::DeviceHandle {
    device::setup(&DeviceConfig::sim().with_step_interval(0.0)).unwrap()
}

fn session(root: &Path, app: &str, instruction: &str) -> RecordingSession {
    RecordingSession::create(root, SessionOptions::new(app, instruction), sim()).unwrap()
}

fn act(s: &str) -> Action {
    parse_model_action(s).unwrap()
}

/// Records `actions` (then finish) and returns the trace directory.
fn record(root: &Path, app: &str, actions: &[&str], answer: Option<&str>) -> std::path::PathBuf {
    let mut s = session(root, app, "demo task");
    for a in actions {
        s.begin_step().unwrap();
        s.commit_step(act(a)).unwrap();
    }
    s.finish_session(answer.map(str::to_string)).unwrap();
    s.dir().to_path_buf()
}

fn tap_events(x: i32, y: i32) -> Vec<TouchEvent> {
    vec![TouchEvent::new(Down, x, y, 0), TouchEvent::new(Up, x + 2, y - 1, 100)]
}

#[test]
fn begin_captures_both_files() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Add an alarm");
    assert_eq!(s.status(), SessionStatus::Armed);
    let cap = s.begin_step().unwrap();
    assert_eq!((cap.pre_xml_path.as_str(), cap.pre_screenshot_path.as_str()), ("xml/0.xml", "screenshots/0.png"));
    let xml = std::fs::read_to_string(s.dir().join(&cap.pre_xml_path)).unwrap();
    assert!(xml.contains("Add alarm"));
    let png = decode_png(&std::fs::read(s.dir().join(&cap.pre_screenshot_path)).unwrap()).unwrap();
    assert_eq!(png.dimensions(), (1080, 2400));
    assert_eq!(s.status(), SessionStatus::Waiting);
    assert!(cap.elements.contains("Add alarm"));
}

#[test]
fn state_machine_rejects_out_of_order_calls() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Add an alarm");
    let state_err = |r: Result<_, RecorderError>| matches!(r, Err(RecorderError::State { .. }));
    assert!(state_err(s.commit_step(act("tap(element=8)")).map(|_| ())));
    assert!(state_err(s.commit_gesture(&tap_events(950, 2185)).map(|_| ())));
    s.begin_step().unwrap();
    assert!(state_err(s.begin_step().map(|_| ())));
    s.commit_step(act("tap(element=8)")).unwrap();
    assert_eq!(s.status(), SessionStatus::Armed);
    s.finish_session(None).unwrap();
    assert_eq!(s.status(), SessionStatus::Finished);
    assert!(state_err(s.begin_step().map(|_| ())));
    assert!(state_err(s.finish_session(None).map(|_| ())));
    assert!(state_err(s.commit_step(act("back()")).map(|_| ())));
    let err = s.begin_step().unwrap_err().to_string();
    assert_eq!(err, "cannot begin a step while the session is finished");
}

#[test]
fn finish_writes_answer_on_the_last_line() {
    let root = tempfile::tempdir().unwrap();
    let dir = record(root.path(), "clock", &["tap(element=2)"], Some("8 min"));
    let text = std::fs::read_to_string(dir.join("trace.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(text.ends_with('\n'));
    let last: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(last["answer"], "8 min");
    assert_eq!(last["action"], "finish(answer=\"8 min\")");
    let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    for key in ["step_index", "action", "pre_xml_path", "pre_screenshot_path", "timestamp"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert_eq!(read_review(&dir).unwrap().status, ReviewStatus::Pending);
}

#[test]
fn immediate_finish_is_a_one_line_trace() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Nothing to do");
    let path = s.finish_session(None).unwrap();
    let trace = RecordedTrace::load(path.parent().unwrap()).unwrap();
    assert_eq!(trace.steps.len(), 1);
    assert!(trace.steps[0].is_finish());
    assert!(path.parent().unwrap().join(&trace.steps[0].pre_xml_path).exists());
}

#[test]
fn typed_text_reaches_the_field() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "finance", "Add income");
    for a in ["tap(element=4)", "tap(element=2)", "tap(element=3)", "type(text=\"3000\")", "tap(element=4)", "tap(element=5)"] {
        s.begin_step().unwrap();
        s.commit_step(act(a)).unwrap();
    }
    s.begin_step().unwrap();
    let step = s.commit_step(act("type(text=\"salary\")")).unwrap();
    assert_eq!(step.action, Some(Action::Type { text: "salary".into() }));
    let cap = s.begin_step().unwrap();
    assert!(cap.elements.contains("salary"), "{}", cap.elements);
}

#[test]
fn failed_execution_records_nothing() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Type somewhere");
    s.begin_step().unwrap();
    let err = s.commit_step(act("type(text=\"x\")")).unwrap_err();
    assert!(matches!(err, RecorderError::Device(crate::DeviceError::NoFocusedField)));
    assert_eq!(s.status(), SessionStatus::Waiting);
    assert!(s.steps().is_empty());
    assert!(matches!(s.commit_step(act("tap(element=99)")), Err(RecorderError::Ground(_))));
    s.commit_step(act("tap(element=8)")).unwrap();
    assert_eq!(s.steps().len(), 1);
}

#[test]
fn gestures_ground_to_elements() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Add an alarm");
    let before = s.begin_step().unwrap();
    let step = s.commit_gesture(&tap_events(950, 2185)).unwrap();
    assert_eq!(step.action, Some(Action::Tap { element: 8 }));
    assert_eq!(step.gesture.unwrap().class, GestureClass::Tap);
    let after = s.begin_step().unwrap();
    assert_ne!(before.elements, after.elements);

    // Find a point no element covers and press there.
    let view = s.pending_view().unwrap().clone();
    let (x, y) = (0..2400)
        .step_by(10)
        .flat_map(|y| (0..1080).step_by(10).map(move |x| (x, y)))
        .find(|&(x, y)| !view.elements.iter().any(|e| e.bounds.contains(x, y)))
        .expect("some uncovered pixel");
    let raw = s.commit_gesture(&tap_events(x, y)).unwrap();
    assert_eq!(raw.action, None);
    assert_eq!(raw.flag, Some(StepFlag::NoHitElement));
    assert_eq!(raw.gesture.unwrap().down, (x, y));
    assert_eq!(s.status(), SessionStatus::Armed);

    s.begin_step().unwrap();
    let malformed = [TouchEvent::new(Move, 1, 1, 0), TouchEvent::new(Up, 1, 1, 5)];
    assert!(matches!(s.commit_gesture(&malformed), Err(RecorderError::Gesture(GestureError::Malformed))));
}

#[test]
fn captures_precede_actions() {
    let root = tempfile::tempdir().unwrap();
    let dir = record(root.path(), "clock", &["tap(element=8)", "tap(element=1)", "type(text=\"6:00 AM\")", "back()"], None);
    let trace = RecordedTrace::load(&dir).unwrap();
    assert_eq!(trace.steps.len(), 5);
    for (i, s) in trace.steps.iter().enumerate() {
        assert_eq!(s.step_index, i);
        assert!(s.capture_timestamp < s.timestamp);
        assert_eq!(s.pre_xml_path, format!("xml/{i}.xml"));
    }
    assert!(trace.steps.windows(2).all(|w| w[0].timestamp <= w[1].capture_timestamp));
}

#[test]
fn replay_reproduces_recorded_screens() {
    let root = tempfile::tempdir().unwrap();
    let script = ["tap(element=4)", "tap(element=2)", "type(text=\"Dana\")", "tap(element=4)", "type(text=\"12345678\")", "tap(element=1)"];
    let dir = record(root.path(), "contacts", &script, None);
    let trace = RecordedTrace::load(&dir).unwrap();

    let mut dev = SimDevice::new(DeviceConfig::sim().with_step_interval(0.0)).unwrap();
    dev.reset("contacts", None).unwrap();
    for step in &trace.steps {
        let obs = dev.observe(false).unwrap();
        let recorded = std::fs::read_to_string(dir.join(&step.pre_xml_path)).unwrap();
        assert_eq!(obs.xml, recorded, "step {}", step.step_index);
        let action = step.action.clone().unwrap();
        if action.is_finish() {
            break;
        }
        let grounded = ground(&action, &crate::ui_tree::compress(&obs.tree), dev.screen()).unwrap();
        dev.perform(&grounded).unwrap();
    }
}

#[test]
fn written_trace_loads_back_equal() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Add an alarm");
    s.begin_step().unwrap();
    s.commit_gesture(&tap_events(950, 2185)).unwrap();
    s.begin_step().unwrap();
    s.commit_step(act("swipe(element=0, direction=\"up\", distance=\"short\")")).unwrap();
    s.finish_session(Some("done \"quoted\"".into())).unwrap();
    let loaded = RecordedTrace::load(s.dir()).unwrap();
    assert_eq!(loaded.steps, s.steps());
    assert_eq!(&loaded.meta, s.meta());
    assert_eq!(loaded.answer(), Some("done \"quoted\""));
}

fn arb_action() -> impl Strategy<Value = Action> {
    prop_oneof![
        (0usize..50).prop_map(|element| Action::Tap { element }),
        (0usize..50).prop_map(|element| Action::LongPress { element }),
        "\\PC*".prop_map(|text| Action::Type { text }),
        Just(Action::Home),
        Just(Action::Back),
    ]
}

fn arb_step() -> impl Strategy<Value = RecordedStep> {
    (arb_action(), 0i64..1_000_000, 1i64..5000, any::<bool>()).prop_map(|(action, t, dt, raw)| RecordedStep {
        step_index: 0,
        action: (!raw).then_some(action),
        pre_xml_path: "xml/0.xml".into(),
        pre_screenshot_path: "screenshots/0.png".into(),
        capture_timestamp: t,
        timestamp: t + dt,
        gesture: raw.then_some(Gesture {
            class: GestureClass::Tap,
            down: (3, 4),
            up: (5, 6),
            duration_ms: dt,
        }),
        flag: raw.then_some(StepFlag::NoHitElement),
        answer: None,
    })
}

proptest! {
    #[test]
    fn jsonl_round_trip(mut steps in prop::collection::vec(arb_step(), 0..8), answer in proptest::option::of("\\PC*")) {
        for (i, s) in steps.iter_mut().enumerate() {
            s.step_index = i;
        }
        steps.push(RecordedStep {
            step_index: steps.len(),
            action: Some(Action::Finish { answer: answer.clone() }),
            pre_xml_path: "xml/9.xml".into(),
            pre_screenshot_path: "screenshots/9.png".into(),
            capture_timestamp: 1,
            timestamp: 2,
            gesture: None,
            flag: None,
            answer,
        });
        let meta = SessionMeta {
            session_id: "s".into(),
            app: "clock".into(),
            instruction: "i".into(),
            env_fixture: None,
            screen_width: 1080,
            screen_height: 2400,
            started_ms: 0,
        };
        let trace = RecordedTrace { meta: meta.clone(), steps };
        let text = trace.to_jsonl();
        prop_assert_eq!(text.lines().count(), trace.steps.len());
        prop_assert_eq!(RecordedTrace::parse_jsonl(meta, &text).unwrap(), trace);
    }
}

#[test]
fn review_rules_once() {
    let root = tempfile::tempdir().unwrap();
    let dir = record(root.path(), "clock", &["tap(element=2)"], Some("Weekdays"));
    let review = submit_review(&dir, Verdict::Verified, Some("ana".into()), None).unwrap();
    assert_eq!(review.status, ReviewStatus::Verified);
    match submit_review(&dir, Verdict::Rejected, Some("bo".into()), None) {
        Err(RecorderError::Conflict(existing)) => assert_eq!(existing, review),
        other => panic!("{other:?}"),
    }
    assert_eq!(read_review(&dir).unwrap(), review);
    assert!(matches!(submit_review(&root.path().join("nope"), Verdict::Verified, None, None), Err(RecorderError::NotFound(_))));
    assert_eq!("reject".parse::<Verdict>(), Ok(Verdict::Rejected));
}

#[test]
fn list_skips_unfinished_sessions() {
    let root = tempfile::tempdir().unwrap();
    record(root.path(), "clock", &[], None);
    let mut open = session(root.path(), "clock", "still going");
    open.begin_step().unwrap();
    let listed = list_traces(root.path()).unwrap();
    assert_eq!(listed.len(), 1);
    assert_eq!(listed[0].steps, 1);
    assert!(list_traces(&root.path().join("missing")).unwrap().is_empty());
}

const FIVE: [&str; 4] = ["tap(element=8)", "tap(element=1)", "type(text=\"7:30 AM\")", "tap(element=4)"];

#[test]
fn both_modes_export_aligned_samples() {
    let root = tempfile::tempdir().unwrap();
    let dir = record(root.path(), "clock", &FIVE, None);
    let out = root.path().join("export");
    let summary = export_training_samples(&dir, &out, &ExportOptions::new(ExportMode::Both)).unwrap();
    assert_eq!((summary.xml_samples, summary.som_samples), (5, 5));
    let read = |name: &str| -> Vec<TrainingSample> {
        std::fs::read_to_string(out.join(name)).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    };
    let (xml, som) = (read("xml.jsonl"), read("som.jsonl"));
    for (x, s) in xml.iter().zip(&som) {
        assert_eq!(x.step_index, s.step_index);
        assert_eq!(x.elements, s.elements);
        let legend: Vec<usize> = s.legend.as_ref().unwrap().iter().map(|l| l.index).collect();
        assert_eq!(legend, s.elements);
        assert_eq!(x.target, s.target);
        assert!(out.join(s.image.as_ref().unwrap()).exists());
        assert!(x.legend.is_none() && x.image.is_none());
    }
    let targets: Vec<&str> = xml.iter().map(|s| s.target.as_str()).collect();
    assert_eq!(targets, [FIVE.as_slice(), &["finish()"]].concat());
    assert!(xml[0].user.contains("(none)"));
    assert!(xml[2].user.contains("Step 1: tap(element=1) (screen changed)"));
    assert!(xml[0].user.contains("Add alarm"));
    assert!(!som[0].user.contains("Add alarm"));

    let only_xml = export_training_samples(&dir, &root.path().join("x"), &ExportOptions::new(ExportMode::Xml)).unwrap();
    assert_eq!((only_xml.xml_samples, only_xml.som_samples), (5, 0));
}

#[test]
fn flagged_steps_are_excluded() {
    let root = tempfile::tempdir().unwrap();
    let mut s = session(root.path(), "clock", "Add an alarm");
    s.begin_step().unwrap();
    s.commit_step(act("tap(element=2)")).unwrap();
    let view = s.begin_step().map(|_| s.pending_view().unwrap().clone()).unwrap();
    let (x, y) = (0..2400)
        .step_by(10)
        .flat_map(|y| (0..1080).step_by(10).map(move |x| (x, y)))
        .find(|&(x, y)| !view.elements.iter().any(|e| e.bounds.contains(x, y)))
        .unwrap();
    s.commit_gesture(&tap_events(x, y)).unwrap();
    s.finish_session(Some("Weekdays".into())).unwrap();
    let summary = export_training_samples(s.dir(), &root.path().join("e"), &ExportOptions::new(ExportMode::Both)).unwrap();
    assert_eq!((summary.xml_samples, summary.som_samples), (2, 2));
    assert_eq!(summary.excluded, vec![ExcludedStep { step_index: 1, reason: "no_hit_element".into() }]);
}

#[test]
fn review_verdicts_gate_export() {
    let root = tempfile::tempdir().unwrap();
    let a = record(root.path(), "clock", &["tap(element=2)"], None);
    let b = record(root.path(), "clock", &["tap(element=4)"], None);
    let c = record(root.path(), "clock", &[], None);
    submit_review(&a, Verdict::Verified, None, None).unwrap();
    submit_review(&b, Verdict::Rejected, None, Some("wrong alarm".into())).unwrap();
    let opts = ExportOptions::new(ExportMode::Xml);
    assert!(matches!(export_training_samples(&b, &root.path().join("b"), &opts), Err(RecorderError::Rejected(_))));

    let all = export_all(root.path(), &root.path().join("out"), &opts).unwrap();
    let mut ids: Vec<String> = all.iter().map(|s| s.trace_id.clone()).collect();
    ids.sort();
    let mut want: Vec<String> = [&a, &c].iter().map(|d| d.file_name().unwrap().to_string_lossy().into_owned()).collect();
    want.sort();
    assert_eq!(ids, want);

    let verified = ExportOptions { verified_only: true, ..opts };
    let only = export_all(root.path(), &root.path().join("out2"), &verified).unwrap();
    assert_eq!(only.len(), 1);
    assert_eq!(only[0].trace_id, a.file_name().unwrap().to_string_lossy());
}

#[test]
fn redaction_hides_values_in_both_modes() {
    let root = tempfile::tempdir().unwrap();
    let dir = record(root.path(), "contacts", &["tap(element=1)"], Some("555 0101"));
    let out = root.path().join("e");
    export_training_samples(&dir, &out, &ExportOptions::new(ExportMode::Both)).unwrap();
    let xml = std::fs::read_to_string(out.join("xml.jsonl")).unwrap();
    assert!(xml.contains("Alice Chen"));
    assert!(xml.contains(REDACTED));
    let second: TrainingSample = serde_json::from_str(xml.lines().nth(1).unwrap()).unwrap();
    assert!(!second.user.contains("555 0101"), "{}", second.user);
    assert!(!second.user.contains("alice.chen@example.com"));

    let plain = ExportOptions { redaction: Redaction::default(), ..ExportOptions::new(ExportMode::Both) };
    let out2 = root.path().join("p");
    export_training_samples(&dir, &out2, &plain).unwrap();
    let unredacted: TrainingSample =
        serde_json::from_str(std::fs::read_to_string(out2.join("xml.jsonl")).unwrap().lines().nth(1).unwrap()).unwrap();
    assert!(unredacted.user.contains("555 0101"));
    assert_eq!(unredacted.elements, second.elements);
    // The same step's annotated screenshot differs once values are masked.
    assert_ne!(std::fs::read(out.join("som/001.png")).unwrap(), std::fs::read(out2.join("som/001.png")).unwrap());

    let extra = Redaction::from_toml("clock = [\"alarm_label\"]").unwrap();
    let mut merged = Redaction::default();
    merged.merge(extra);
    assert!(merged.0["clock"].contains("alarm_label"));
}

#[test]
fn missing_capture_is_a_corrupt_trace() {
    let root = tempfile::tempdir().unwrap();
    let dir = record(root.path(), "clock", &["tap(element=2)"], None);
    std::fs::remove_file(dir.join("xml/1.xml")).unwrap();
    let err = export_training_samples(&dir, &root.path().join("e"), &ExportOptions::new(ExportMode::Xml)).unwrap_err();
    assert!(matches!(err, RecorderError::CorruptTrace { .. }), "{err}");
    let dir = record(root.path(), "clock", &["tap(element=2)"], None);
    std::fs::remove_file(dir.join("screenshots/0.png")).unwrap();
    assert!(export_training_samples(&dir, &root.path().join("x"), &ExportOptions::new(ExportMode::Xml)).is_ok());
    assert!(matches!(
        export_training_samples(&dir, &root.path().join("s"), &ExportOptions::new(ExportMode::Som)),
        Err(RecorderError::CorruptTrace { .. })
    ));
}

fn seeds() -> Vec<String> {
    ["Set an alarm for 6:00 AM", "Turn off the Gym alarm", "What time is the Wake up alarm?"].map(String::from).to_vec()
}

#[test]
fn expansion_returns_fresh_candidates() {
    let reply = "1. Add an alarm for 5:15 AM labeled Run\n2. Delete the 10:30 PM alarm\n- Rename the Gym alarm to Pool\n\n3) Turn on the 10:30 PM alarm\n\"Set the Wake up alarm to repeat daily\"\n6. One more than asked";
    let llm = ScriptedClient::new([reply]);
    let out = expand_tasks(&seeds(), &llm, "clock", 5, &Templates::default()).unwrap();
    assert_eq!(out.candidates.len(), 5);
    assert_eq!(out.duplicates, 0);
    assert_eq!(out.candidates[0].instruction, "Add an alarm for 5:15 AM labeled Run");
    assert_eq!(out.candidates[4].instruction, "Set the Wake up alarm to repeat daily");
    for c in &out.candidates {
        assert!(!seeds().contains(&c.instruction));
        assert_eq!(c.review, ReviewStatus::Pending);
    }
}

#[test]
fn expansion_drops_duplicates() {
    let reply = "Delete the 10:30 PM alarm\ndelete the 10:30 pm alarm.\nSet an alarm for 6:00 AM\nRename the Gym alarm";
    let out = expand_tasks(&seeds(), &ScriptedClient::new([reply]), "clock", 5, &Templates::default()).unwrap();
    assert_eq!(out.candidates.len(), 2);
    assert_eq!(out.duplicates, 2);
    assert_eq!(out.requested, 5);
}

#[test]
fn expansion_preconditions() {
    let llm = ScriptedClient::new(Vec::<String>::new());
    assert!(matches!(expand_tasks(&[], &llm, "clock", 5, &Templates::default()), Err(RecorderError::EmptySeeds)));
    assert!(matches!(expand_tasks(&[" ".into()], &llm, "clock", 5, &Templates::default()), Err(RecorderError::EmptySeeds)));
    assert!(matches!(expand_tasks(&seeds(), &llm, "clock", 0, &Templates::default()), Err(RecorderError::InvalidArgument(_))));
    assert!(matches!(expand_tasks(&seeds(), &llm, "clock", 3, &Templates::default()), Err(RecorderError::Endpoint(_))));
}

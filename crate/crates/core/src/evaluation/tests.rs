use std::sync::Arc;

use proptest::prelude::*;
use serde_json::json;

use super::*;
use crate::actions::{Action, GroundedAction};
use crate::agent::ScriptedClient;
use crate::ui_tree::{compress, parse_hierarchy_xml};

fn obs(texts: &[&str], state: Value) -> Observation {
    let nodes: String = texts
        .iter()
        .enumerate()
        .map(|(i, t)| format!(r#"<node text="{t}" resource-id="app:id/n{i}" clickable="true" bounds="[0,{}][1080,{}]"/>"#, 200 + i * 100, 290 + i * 100))
        .collect();
    let xml = format!(r#"<hierarchy><node bounds="[0,0][1080,2400]">{nodes}</node></hierarchy>"#);
    Observation {
        tree: parse_hierarchy_xml(&xml, 1080, 2400).unwrap(),
        xml,
        screenshot: None,
        foreground_app: "app".into(),
        capture_timestamp: 0,
        device_state: Some(json!({ "app": state })),
        xml_retries: 0,
    }
}

fn step(i: usize, action: Action, pre: &Arc<Observation>, post: Observation) -> Step {
    Step {
        step_index: i,
        pre_observation: pre.clone(),
        compressed: Arc::new(compress(&pre.tree)),
        som: None,
        model_raw: String::new(),
        grounded: Some(GroundedAction::KeyBack),
        action,
        post_observation: Arc::new(post),
        changed_screen: true,
        error: None,
    }
}

/// A trace whose i-th performed step ends on `screens[i]`, then finishes.
fn trace(screens: Vec<Observation>, answer: Option<&str>) -> Trace {
    let mut pre = Arc::new(obs(&["start"], json!({})));
    let mut steps = Vec::new();
    for (i, s) in screens.into_iter().enumerate() {
        let st = step(i, Action::Back, &pre, s);
        pre = st.post_observation.clone();
        steps.push(st);
    }
    let n = steps.len();
    let mut fin = step(n, Action::Finish { answer: answer.map(str::to_string) }, &pre, (*pre).clone());
    fin.changed_screen = false;
    steps.push(fin);
    Trace {
        task_id: "t".into(),
        steps,
        finish_answer: answer.map(str::to_string),
        termination: Termination::Finished,
        unparsed_replies: 0,
        error: None,
    }
}

fn text_goal(name: &str, text: &str) -> SubGoalSpec {
    SubGoalSpec { name: name.into(), ordered_after: None, predicate: Some(NodePredicate::text_equals(text)), state: None }
}

fn op_task(goals: Vec<SubGoalSpec>) -> TaskSpec {
    TaskSpec {
        task_id: "t".into(),
        app: "app".into(),
        instruction: "do it".into(),
        kind: TaskKind::Operation,
        human_steps: 3,
        env_fixture: None,
        gold_answer: None,
        gold_actions: Vec::new(),
        sub_goals: goals,
    }
}

fn query_task(gold: &str) -> TaskSpec {
    TaskSpec { kind: TaskKind::Query, gold_answer: Some(gold.into()), sub_goals: Vec::new(), ..op_task(Vec::new()) }
}

#[test]
fn all_goals_on_final_screen() {
    let task = op_task(vec![text_goal("a", "A"), text_goal("b", "B"), text_goal("c", "C")]);
    let t = trace(vec![obs(&["x"], json!({})), obs(&["A", "B", "C"], json!({}))], None);
    let r = evaluate(&task, &t, None).unwrap();
    assert!(r.completed);
    assert!(r.sub_goal_flags.iter().all(|f| f.satisfied_at_step == Some(1)));
    assert_eq!(r.steps_taken, 3);
    assert_eq!(r.changed_flags, vec![true, true]);
}

#[test]
fn intermediate_evidence_is_kept() {
    let task = op_task(vec![text_goal("confirm", "Saved")]);
    let screens: Vec<Observation> = (0..9).map(|i| obs(&[if i == 4 { "Saved" } else { "List" }], json!({}))).collect();
    let full = trace(screens.clone(), None);
    let flags = check_subgoals(&task, &full);
    assert_eq!(flags[0].satisfied_at_step, Some(4));
    assert!(evaluate(&task, &full, None).unwrap().completed);
    let cut = trace(screens[..4].to_vec(), None);
    assert!(!evaluate(&task, &cut, None).unwrap().completed);
}

#[test]
fn ordered_after_waits_for_parent() {
    let mut child = text_goal("child", "C");
    child.ordered_after = Some("parent".into());
    let task = op_task(vec![text_goal("parent", "P"), child]);
    // Steps 0..5: child evidence at 2, parent at 4, child again at 5.
    let screens = |child_again: bool| -> Vec<Observation> {
        (0..6)
            .map(|i| match i {
                2 => obs(&["C"], json!({})),
                4 => obs(&["P"], json!({})),
                5 if child_again => obs(&["C"], json!({})),
                _ => obs(&["-"], json!({})),
            })
            .collect()
    };
    let flags = check_subgoals(&task, &trace(screens(true), None));
    assert_eq!(flags[0].satisfied_at_step, Some(4));
    assert_eq!(flags[1].satisfied_at_step, Some(5));
    let flags = check_subgoals(&task, &trace(screens(false), None));
    assert_eq!(flags[1].satisfied_at_step, None);
    // Both on one screen: the parent is listed first, so both count there.
    let flags = check_subgoals(&task, &trace(vec![obs(&["P", "C"], json!({}))], None));
    assert_eq!((flags[0].satisfied_at_step, flags[1].satisfied_at_step), (Some(0), Some(0)));
}

#[test]
fn partial_completion() {
    let task = op_task(vec![text_goal("a", "A"), text_goal("b", "B"), text_goal("c", "C")]);
    let r = evaluate(&task, &trace(vec![obs(&["A"], json!({})), obs(&["B"], json!({}))], None), None).unwrap();
    assert!(!r.completed);
    assert_eq!(r.satisfied_sub_goals(), 2);
}

#[test]
fn finish_screen_is_not_evidence() {
    // Finishing immediately on a screen that already matches proves nothing.
    let task = op_task(vec![text_goal("a", "start")]);
    let r = evaluate(&task, &trace(Vec::new(), None), None).unwrap();
    assert!(!r.completed);
    assert_eq!(r.steps_taken, 1);
    assert!(r.changed_flags.is_empty());
}

#[test]
fn state_probes() {
    let state = json!({"alarms": [{"time": "7:00 AM", "on": true}, {"time": "7:30 AM", "on": false}], "name": "Pixel"});
    let p = |path: &str, equals: Value| StateProbe { path: path.into(), equals }.holds(&state);
    assert!(p("alarms.*.time", json!("7:30 AM")));
    assert!(p("alarms.1.on", json!(false)));
    assert!(!p("alarms.0.on", json!(false)));
    assert!(p("name", json!("Pixel")));
    assert!(!p("missing.path", json!(null)));
    assert!(!p("alarms.7.time", json!("7:00 AM")));

    let goal = SubGoalSpec {
        name: "s".into(),
        ordered_after: None,
        predicate: None,
        state: Some(StateProbe { path: "name".into(), equals: json!("Pixel") }),
    };
    assert!(goal.holds("app", &obs(&[], state.clone())));
    assert!(!goal.holds("other", &obs(&[], state)));
    let mut real = obs(&[], json!({}));
    real.device_state = None;
    assert!(!goal.holds("app", &real));
}

#[test]
fn answer_matching() {
    assert!(answers_match("7.0km, 8 min", "7.0 km and 8 minutes"));
    assert!(answers_match("42", "42"));
    assert!(answers_match("Weekdays", "weekdays."));
    assert!(answers_match("Apr 30", "April 30"));
    assert!(answers_match("4.50", "4.5"));
    assert!(answers_match("alice.chen@example.com", "Alice.Chen@example.com"));
    assert!(!answers_match("Apr 30", "May 30"));
    assert!(!answers_match("7.0km, 8 min", "7.0 km and 9 minutes"));
    assert!(!answers_match("42", "43"));
    assert!(!answers_match("Weekdays", "Never"));
    assert_eq!(normalize_answer("  Hello,  World! 3.5 "), "hello world 3.5");
}

#[test]
fn judge_query_rules() {
    let t = Templates::default();
    assert_eq!(judge_query("42", Some("42"), "q", None), Ok(true));
    assert_eq!(judge_query("42", None, "q", None), Ok(false));
    assert_eq!(judge_query("Weekdays", Some("Every weekday"), "q", None), Ok(false));

    // Exact match never reaches the judge.
    let silent = ScriptedClient::new(Vec::<String>::new());
    assert_eq!(judge_query("42", Some("42"), "q", Some((&silent, &t))), Ok(true));

    let yes = ScriptedClient::new(["CORRECT - same days"]);
    assert_eq!(judge_query("Weekdays", Some("Every weekday"), "q", Some((&yes, &t))), Ok(true));
    let no = ScriptedClient::new(["INCORRECT"]);
    assert_eq!(judge_query("Weekdays", Some("Sundays"), "q", Some((&no, &t))), Ok(false));
    let odd = ScriptedClient::new(["Maybe"]);
    assert!(matches!(judge_query("a", Some("b"), "q", Some((&odd, &t))), Err(EvalError::JudgeReply(_))));
    let dead = ScriptedClient::new(Vec::<String>::new());
    assert!(matches!(judge_query("a", Some("b"), "q", Some((&dead, &t))), Err(EvalError::Endpoint(_))));
}

#[test]
fn query_evaluation() {
    let task = TaskSpec { human_steps: 5, ..query_task("Weekdays") };
    let screens: Vec<Observation> = (0..5).map(|_| obs(&["x"], json!({}))).collect();
    let r = evaluate(&task, &trace(screens, Some("Weekdays")), None).unwrap();
    assert!(r.completed);
    assert_eq!(r.answer_correct, Some(true));
    assert_eq!(r.steps_taken, 6);
    assert!(r.sub_goal_flags.is_empty());
    let r = evaluate(&task, &trace(Vec::new(), None), None).unwrap();
    assert_eq!(r.answer_correct, Some(false));
}

#[test]
fn task_problems() {
    let text = r#"
task_id = "x"
app = "clock"
instruction = "do"
kind = "operation"
human_steps = 2
gold_actions = ["tap(element=1)", "finish()"]

[[sub_goals]]
name = "a"
predicate = { text_equals = "A" }

[[sub_goals]]
name = "b"
ordered_after = "a"
state = { path = "x", equals = 1 }
"#;
    let task = TaskSpec::from_toml(text).unwrap();
    assert!(task.problems().is_empty(), "{:?}", task.problems());

    let mut bad = task.clone();
    bad.sub_goals[1].ordered_after = Some("zzz".into());
    let problems = bad.problems();
    assert_eq!(problems.len(), 1);
    assert!(problems[0].message.contains("zzz"));
    assert_eq!(problems[0].anchor.as_deref(), Some("\"zzz\""));

    let mut empty = task.clone();
    empty.sub_goals.clear();
    assert_eq!(empty.problems().len(), 1);

    let mut q = task.clone();
    q.kind = TaskKind::Query;
    q.sub_goals.clear();
    assert_eq!(q.problems()[0].message, "query task has no gold_answer");

    let mut g = task;
    g.gold_actions = vec!["tap(element=1)".into(), "wave()".into()];
    assert_eq!(g.problems().len(), 1);
    assert!(TaskSpec::from_toml("task_id = 1").is_err());
}

fn arb_screens() -> impl Strategy<Value = Vec<Vec<bool>>> {
    prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 0..12)
}

/// Three goals; the third is ordered after the first.
fn chained_task() -> TaskSpec {
    let mut c = text_goal("c", "C");
    c.ordered_after = Some("a".into());
    op_task(vec![text_goal("a", "A"), text_goal("b", "B"), c])
}

fn screens_from(bits: &[Vec<bool>]) -> Vec<Observation> {
    bits.iter()
        .map(|b| {
            let texts: Vec<&str> = ["A", "B", "C"].iter().zip(b).filter(|(_, on)| **on).map(|(t, _)| *t).collect();
            obs(&texts, json!({}))
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn appending_never_unsatisfies(bits in arb_screens(), extra in arb_screens()) {
        let task = chained_task();
        let before = check_subgoals(&task, &trace(screens_from(&bits), None));
        let mut all = bits.clone();
        all.extend(extra);
        let after = check_subgoals(&task, &trace(screens_from(&all), None));
        for (b, a) in before.iter().zip(&after) {
            if b.satisfied_at_step.is_some() {
                prop_assert_eq!(b.satisfied_at_step, a.satisfied_at_step);
            }
        }
    }

    #[test]
    fn dependents_follow_parents(bits in arb_screens()) {
        let flags = check_subgoals(&chained_task(), &trace(screens_from(&bits), None));
        if let Some(child) = flags[2].satisfied_at_step {
            let parent = flags[0].satisfied_at_step;
            prop_assert!(parent.is_some_and(|p| p <= child));
        }
    }

    #[test]
    fn completed_means_every_flag_set(bits in arb_screens()) {
        let task = chained_task();
        let r = evaluate(&task, &trace(screens_from(&bits), None), None).unwrap();
        prop_assert_eq!(r.completed, r.sub_goal_flags.iter().all(|f| f.satisfied_at_step.is_some()));
    }
}

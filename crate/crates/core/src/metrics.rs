//! Suite-level metrics and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::evaluation::{EvalResult, TaskKind};
use crate::util::round2;

/// SR below which RRR is not reported.
pub const RRR_MIN_SR: f64 = 5.0;

pub const REPORT_SCHEMA: &str = "droidharness.report/1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no results to aggregate")]
    EmptyResults,
    #[error("no operation tasks among the results")]
    NoOperationTasks,
    #[error("no performed operations among the results")]
    NoOperations,
}

/// Percent of tasks completed, to two decimals.
pub fn success_rate(results: &[EvalResult]) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let done = results.iter().filter(|r| r.completed).count();
    Ok(round2(100.0 * done as f64 / results.len() as f64))
}

/// Satisfied sub-goals over all sub-goals of operation tasks (micro average).
pub fn sub_goal_rate(results: &[EvalResult]) -> Result<f64, MetricsError> {
    let ops: Vec<&EvalResult> = results.iter().filter(|r| r.kind == TaskKind::Operation).collect();
    let total: usize = ops.iter().map(|r| r.sub_goal_flags.len()).sum();
    if ops.is_empty() || total == 0 {
        return Err(MetricsError::NoOperationTasks);
    }
    let satisfied: usize = ops.iter().map(|r| r.satisfied_sub_goals()).sum();
    Ok(round2(100.0 * satisfied as f64 / total as f64))
}

/// Mean over completed tasks of `100 * human_steps / steps_taken`. Absent
/// when SR is below 5 or nothing was completed. May exceed 100.
pub fn reversed_redundancy(results: &[EvalResult]) -> Option<f64> {
    if results.is_empty() {
        return None;
    }
    let done: Vec<&EvalResult> = results.iter().filter(|r| r.completed && r.steps_taken > 0).collect();
    let sr = 100.0 * results.iter().filter(|r| r.completed).count() as f64 / results.len() as f64;
    if sr < RRR_MIN_SR || done.is_empty() {
        return None;
    }
    let sum: f64 = done.iter().map(|r| 100.0 * f64::from(r.human_steps) / r.steps_taken as f64).sum();
    Some(round2(sum / done.len() as f64))
}

/// Percent of performed operations, pooled over all tasks, after which the
/// screen changed.
pub fn reasonable_operation_ratio(results: &[EvalResult]) -> Result<f64, MetricsError> {
    let total: usize = results.iter().map(|r| r.changed_flags.len()).sum();
    if total == 0 {
        return Err(MetricsError::NoOperations);
    }
    let changed = results.iter().flat_map(|r| &r.changed_flags).filter(|c| **c).count();
    Ok(round2(100.0 * changed as f64 / total as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppCount {
    pub completed: usize,
    pub total: usize,
}

/// How the aggregates are computed, carried in every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conventions {
    pub sub_sr: String,
    pub rrr: String,
    pub ror: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            sub_sr: "micro: satisfied sub-goals / all sub-goals of operation tasks".into(),
            rrr: "mean over completed tasks of 100*human_steps/steps_taken; omitted when SR < 5".into(),
            ror: "pooled: changed-screen actions / performed actions, finish excluded".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub app: String,
    pub kind: TaskKind,
    pub completed: bool,
    pub steps_taken: usize,
    pub human_steps: u32,
    pub sub_goals_satisfied: usize,
    pub sub_goals_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sr: f64,
    pub sub_sr: Option<f64>,
    pub rrr: Option<f64>,
    pub ror: Option<f64>,
    pub n_tasks: usize,
    pub n_completed: usize,
    pub per_app: BTreeMap<String, AppCount>,
    pub tasks: Vec<TaskRow>,
    pub conventions: Conventions,
}

pub fn compute_report(results: &[EvalResult]) -> Result<MetricsReport, MetricsError> {
    let sr = success_rate(results)?;
    let mut per_app: BTreeMap<String, AppCount> = BTreeMap::new();
    for r in results {
        let e = per_app.entry(r.app.clone()).or_insert(AppCount { completed: 0, total: 0 });
        e.total += 1;
        e.completed += usize::from(r.completed);
    }
    let mut tasks: Vec<TaskRow> = results
        .iter()
        .map(|r| TaskRow {
            task_id: r.task_id.clone(),
            app: r.app.clone(),
            kind: r.kind,
            completed: r.completed,
            steps_taken: r.steps_taken,
            human_steps: r.human_steps,
            sub_goals_satisfied: r.satisfied_sub_goals(),
            sub_goals_total: r.sub_goal_flags.len(),
        })
        .collect();
    tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
    Ok(MetricsReport {
        sr,
        sub_sr: sub_goal_rate(results).ok(),
        rrr: reversed_redundancy(results),
        ror: reasonable_operation_ratio(results).ok(),
        n_tasks: results.len(),
        n_completed: results.iter().filter(|r| r.completed).count(),
        per_app,
        tasks,
        conventions: Conventions::default(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (expected table, json or csv)")),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    schema: String,
    #[serde(flatten)]
    report: MetricsReport,
}

pub fn render(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let doc = JsonReport { schema: REPORT_SCHEMA.into(), report: report.clone() };
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Table => render_table(report),
    }
}

fn render_table(r: &MetricsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<8}{:<8}{:<8}{:<8}{:<8}", "SR", "Sub-SR", "RRR", "ROR", "Tasks");
    let _ = writeln!(
        out,
        "{:<8}{:<8}{:<8}{:<8}{}/{}",
        format!("{:.2}", r.sr),
        cell(r.sub_sr),
        cell(r.rrr),
        cell(r.ror),
        r.n_completed,
        r.n_tasks
    );
    out.push('\n');
    let width = r.per_app.keys().map(|k| k.chars().count()).max().unwrap_or(3).max(5) + 2;
    let _ = writeln!(out, "{:<width$}{:>10}{:>8}", "App", "Completed", "Total");
    for (app, c) in &r.per_app {
        let _ = writeln!(out, "{app:<width$}{:>10}{:>8}", c.completed, c.total);
    }
    let _ = writeln!(out, "{:<width$}{:>10}{:>8}", "Total", r.n_completed, r.n_tasks);
    out
}

fn render_csv(r: &MetricsReport) -> String {
    let mut out = String::from("scope,completed,total,sr,sub_sr,rrr,ror\n");
    let _ = writeln!(out, "all,{},{},{:.2},{},{},{}", r.n_completed, r.n_tasks, r.sr, cell(r.sub_sr), cell(r.rrr), cell(r.ror));
    for (app, c) in &r.per_app {
        let sr = if c.total == 0 { 0.0 } else { round2(100.0 * c.completed as f64 / c.total as f64) };
        let _ = writeln!(out, "{app},{},{},{sr:.2},,,", c.completed, c.total);
    }
    out
}

/// Checks a JSON report against the documented schema.
pub fn validate_report_json(text: &str) -> Result<MetricsReport, Vec<String>> {
    let v: Value = serde_json::from_str(text).map_err(|e| vec![format!("not JSON: {e}")])?;
    let mut problems = Vec::new();
    if v.get("schema").and_then(Value::as_str) != Some(REPORT_SCHEMA) {
        problems.push(format!("schema must be {REPORT_SCHEMA:?}"));
    }
    let percent = |key: &str, required: bool, problems: &mut Vec<String>| match v.get(key) {
        None if required => problems.push(format!("missing {key}")),
        None | Some(Value::Null) => {}
        Some(x) => match x.as_f64() {
            Some(p) if key == "rrr" && p >= 0.0 => {}
            Some(p) if (0.0..=100.0).contains(&p) => {}
            _ => problems.push(format!("{key} must be a percentage, got {x}")),
        },
    };
    percent("sr", true, &mut problems);
    for key in ["sub_sr", "rrr", "ror"] {
        if v.get(key).is_none() {
            problems.push(format!("missing {key}"));
        }
        percent(key, false, &mut problems);
    }
    let report: MetricsReport = match serde_json::from_value::<JsonReport>(v.clone()) {
        Ok(doc) => doc.report,
        Err(e) => {
            problems.push(format!("shape: {e}"));
            return Err(problems);
        }
    };
    if report.n_completed > report.n_tasks {
        problems.push("n_completed exceeds n_tasks".into());
    }
    let app_done: usize = report.per_app.values().map(|c| c.completed).sum();
    let app_total: usize = report.per_app.values().map(|c| c.total).sum();
    if app_done != report.n_completed || app_total != report.n_tasks {
        problems.push("per_app counts do not sum to the totals".into());
    }
    if report.n_tasks > 0 {
        let sr = round2(100.0 * report.n_completed as f64 / report.n_tasks as f64);
        if (sr - report.sr).abs() > 0.005 {
            problems.push(format!("sr {} disagrees with {}/{}", report.sr, report.n_completed, report.n_tasks));
        }
        if report.sr < RRR_MIN_SR && report.rrr.is_some() {
            problems.push("rrr present although sr < 5".into());
        }
    }
    if problems.is_empty() {
        Ok(report)
    } else {
        Err(problems)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Termination;
    use crate::evaluation::SubGoalFlag;
    use proptest::prelude::*;

    fn result(app: &str, completed: bool) -> EvalResult {
        EvalResult {
            task_id: format!("{app}-{}", rand_id()),
            app: app.into(),
            kind: TaskKind::Query,
            human_steps: 4,
            completed,
            sub_goal_flags: Vec::new(),
            answer_correct: Some(completed),
            steps_taken: 4,
            changed_flags: vec![true, true, true],
            termination: Termination::Finished,
            finish_answer: None,
            error: None,
        }
    }

    fn rand_id() -> u64 {
        use std::sync::atomic::{AtomicU64, Ordering};
        static N: AtomicU64 = AtomicU64::new(0);
        N.fetch_add(1, Ordering::Relaxed)
    }

    fn op(flags: &[bool]) -> EvalResult {
        EvalResult {
            kind: TaskKind::Operation,
            completed: flags.iter().all(|f| *f),
            sub_goal_flags: flags
                .iter()
                .enumerate()
                .map(|(i, f)| SubGoalFlag { name: format!("g{i}"), satisfied_at_step: f.then_some(i) })
                .collect(),
            answer_correct: None,
            ..result("a", false)
        }
    }

    const APPS: [(&str, usize); 9] = [
        ("Bluecoins", 15),
        ("Calendar", 14),
        ("Cantook", 12),
        ("Clock", 27),
        ("Contacts", 15),
        ("Maps.me", 15),
        ("PiMusic", 12),
        ("Setting", 23),
        ("Zoom", 5),
    ];

    fn table_row(completed: [usize; 9]) -> Vec<EvalResult> {
        APPS.iter()
            .zip(completed)
            .flat_map(|((app, total), done)| (0..*total).map(move |i| result(app, i < done)))
            .collect()
    }

    #[test]
    fn per_app_counts_reproduce_success_rates() {
        assert_eq!(APPS.iter().map(|(_, n)| n).sum::<usize>(), 138);
        for (row, total, sr) in [
            ([1, 1, 5, 7, 8, 2, 2, 13, 4], 43, 31.16),
            ([1, 0, 3, 8, 5, 5, 2, 10, 1], 35, 25.36),
            ([1, 4, 6, 4, 6, 6, 4, 9, 3], 43, 31.16),
        ] {
            let report = compute_report(&table_row(row)).unwrap();
            assert_eq!(report.n_completed, total);
            assert!((report.sr - sr).abs() < 0.01, "{} vs {sr}", report.sr);
            assert_eq!(report.per_app["Clock"].total, 27);
        }
    }

    #[test]
    fn success_rate_examples() {
        let zero: Vec<EvalResult> = (0..10).map(|_| result("a", false)).collect();
        assert_eq!(success_rate(&zero), Ok(0.0));
        assert_eq!(success_rate(&[]), Err(MetricsError::EmptyResults));
    }

    #[test]
    fn sub_goal_rate_examples() {
        assert_eq!(sub_goal_rate(&[op(&[true, true, true]), op(&[false, false])]), Ok(60.0));
        assert_eq!(sub_goal_rate(&[op(&[true]), op(&[true, true])]), Ok(100.0));
        // 4 tasks, 11 sub-goals, 7 satisfied.
        let suite = [op(&[true, true, false]), op(&[true, false]), op(&[true, true, true, false]), op(&[true, false])];
        assert_eq!(suite.iter().map(|r| r.sub_goal_flags.len()).sum::<usize>(), 11);
        assert_eq!(sub_goal_rate(&suite), Ok(63.64));
        assert_eq!(sub_goal_rate(&[result("a", true)]), Err(MetricsError::NoOperationTasks));
    }

    #[test]
    fn rrr_examples() {
        let one = |human: u32, taken: usize| EvalResult { human_steps: human, steps_taken: taken, ..result("a", true) };
        assert_eq!(reversed_redundancy(&[one(4, 8)]), Some(50.0));
        assert_eq!(reversed_redundancy(&[one(6, 5)]), Some(120.0));
        // SR 2.17: 3 of 138.
        let mut low: Vec<EvalResult> = (0..135).map(|_| result("a", false)).collect();
        low.extend((0..3).map(|_| one(4, 4)));
        assert_eq!(success_rate(&low), Ok(2.17));
        assert_eq!(reversed_redundancy(&low), None);
        let report = compute_report(&low).unwrap();
        assert!(render(&report, ReportFormat::Table).lines().nth(1).unwrap().contains(" -  "));
    }

    #[test]
    fn ror_examples() {
        let flags = |c: usize, n: usize| EvalResult { changed_flags: (0..n).map(|i| i < c).collect(), ..result("a", true) };
        assert_eq!(reasonable_operation_ratio(&[flags(17, 20)]), Ok(85.0));
        assert_eq!(reasonable_operation_ratio(&[flags(5, 5)]), Ok(100.0));
        assert_eq!(reasonable_operation_ratio(&[flags(4, 5), flags(3, 3), flags(0, 2)]), Ok(70.0));
        assert_eq!(reasonable_operation_ratio(&[flags(0, 0)]), Err(MetricsError::NoOperations));
    }

    #[test]
    fn report_formats() {
        let results = table_row([1, 1, 5, 7, 8, 2, 2, 13, 4]);
        let report = compute_report(&results).unwrap();
        assert_eq!(report.sub_sr, None);
        let table = render(&report, ReportFormat::Table);
        assert!(table.contains("31.16"));
        assert!(table.lines().nth(1).unwrap().split_whitespace().nth(1) == Some("-"));
        assert!(table.contains("Total"));
        let csv = render(&report, ReportFormat::Csv);
        assert!(csv.starts_with("scope,completed,total,sr,sub_sr,rrr,ror\nall,43,138,31.16,-,"));
        assert!(csv.contains("\nClock,7,27,25.93,,,\n"));
        let json = render(&report, ReportFormat::Json);
        assert_eq!(validate_report_json(&json), Ok(report));
    }

    #[test]
    fn validator_catches_inconsistencies() {
        let report = compute_report(&table_row([1, 1, 5, 7, 8, 2, 2, 13, 4])).unwrap();
        let mut v: Value = serde_json::from_str(&render(&report, ReportFormat::Json)).unwrap();
        v["n_completed"] = serde_json::json!(44);
        v["schema"] = serde_json::json!("other");
        let problems = validate_report_json(&v.to_string()).unwrap_err();
        assert_eq!(problems.len(), 3, "{problems:?}");
        assert!(validate_report_json("[]").is_err());
    }

    fn arb_result() -> impl Strategy<Value = EvalResult> {
        (0..3usize, any::<bool>(), 1u32..10, 1usize..30, prop::collection::vec(any::<bool>(), 0..8)).prop_map(
            |(app, completed, human, taken, changed)| EvalResult {
                app: ["x", "y", "z"][app].into(),
                completed,
                human_steps: human,
                steps_taken: taken,
                changed_flags: changed,
                ..result("x", completed)
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn report_is_consistent(results in prop::collection::vec(arb_result(), 1..60)) {
            let r = compute_report(&results).unwrap();
            prop_assert!((0.0..=100.0).contains(&r.sr));
            prop_assert!(r.n_completed <= r.n_tasks);
            prop_assert_eq!(r.per_app.values().map(|c| c.completed).sum::<usize>(), r.n_completed);
            prop_assert_eq!(r.sr, round2(100.0 * r.n_completed as f64 / r.n_tasks as f64));
            if r.sr < RRR_MIN_SR {
                prop_assert!(r.rrr.is_none());
            }
        }

        #[test]
        fn uncompleted_tasks_do_not_move_rrr(results in prop::collection::vec(arb_result(), 1..40)) {
            let full = reversed_redundancy(&results);
            let sr = success_rate(&results).unwrap();
            let mut trimmed: Vec<EvalResult> = results.clone();
            if let Some(i) = trimmed.iter().position(|r| !r.completed) {
                trimmed.remove(i);
                let still_reported = !trimmed.is_empty() && success_rate(&trimmed).unwrap() >= RRR_MIN_SR && sr >= RRR_MIN_SR;
                if still_reported {
                    prop_assert_eq!(reversed_redundancy(&trimmed), full);
                }
            }
        }

        #[test]
        fn ror_ignores_order(mut results in prop::collection::vec(arb_result(), 1..40)) {
            let a = reasonable_operation_ratio(&results);
            results.reverse();
            prop_assert_eq!(reasonable_operation_ratio(&results), a);
        }
    }
}

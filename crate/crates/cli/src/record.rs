use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use droidharness_client::{Client, ClientError};
use droidharness_core::agent::ModelEndpoint;
use droidharness_core::api::{CommitRequest, ExportRequest};
use droidharness_core::recorder::{ExportMode, GestureThresholds, Redaction, SessionOptions, SessionStatus, Verdict};
use droidharness_server::Expander;

use crate::{absolute, connect, LocalServer, ModelArgs};

const HELP: &str = "\
Enter one action per step, e.g. tap(element=3), swipe(element=0, direction=up, distance=medium),
type(text=\"hello\"), long_press(element=2), home(), back(), finish(answer=\"...\").
:gesture waits for a touch on the device, :shot FILE saves the screen, :abort discards the session.";

#[derive(Debug, Args)]
pub struct RecordArgs {
    /// App the task starts in.
    #[arg(long, required_unless_present = "attach")]
    app: Option<String>,
    /// Task instruction shown to the annotator.
    #[arg(long, required_unless_present = "attach")]
    instruction: Option<String>,
    /// Named initial state of a simulator app.
    #[arg(long)]
    fixture: Option<String>,
    /// Trace id; generated when absent.
    #[arg(long)]
    id: Option<String>,
    /// Take control of an open session instead of creating one.
    #[arg(long, conflicts_with_all = ["app", "instruction", "fixture", "id"])]
    attach: Option<String>,
    /// Movement in pixels below which a touch is a tap.
    #[arg(long)]
    tap_radius: Option<f64>,
    /// Hold time in milliseconds from which a touch is a long press.
    #[arg(long)]
    long_press_ms: Option<i64>,
    /// Seconds `:gesture` waits for a touch.
    #[arg(long, default_value_t = 60)]
    gesture_timeout: u64,
    #[command(flatten)]
    local: LocalServer,
}

fn begin(c: &Client, id: &str, out: &mut impl Write) -> Result<()> {
    let state = c.begin_step(id)?;
    let capture = state.pending.context("the server returned no capture")?;
    writeln!(out, "-- step {} --", capture.step_index)?;
    write!(out, "{}", capture.elements)?;
    if !capture.elements.ends_with('\n') {
        writeln!(out)?;
    }
    Ok(())
}

/// Errors the annotator can correct by entering another action.
fn recoverable(e: &ClientError) -> bool {
    matches!(e.code(), Some("action_parse" | "ground" | "gesture" | "device"))
}

pub fn record(server: Option<&str>, args: RecordArgs) -> Result<()> {
    let conn = connect(server, || args.local.config())?;
    let c = &conn.client;
    let mut state = match &args.attach {
        Some(id) => c.claim_session(id)?,
        None => {
            let mut options = SessionOptions::new(args.app.clone().unwrap_or_default(), args.instruction.clone().unwrap_or_default());
            options.env_fixture = args.fixture.clone();
            options.session_id = args.id.clone();
            let mut t = GestureThresholds::default();
            if let Some(r) = args.tap_radius {
                t.tap_radius = r;
            }
            if let Some(ms) = args.long_press_ms {
                t.long_press_ms = ms;
            }
            options.thresholds = t;
            c.create_session(&options)?
        }
    };
    let id = state.meta.session_id.clone();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    writeln!(out, "session {id}: {} ({})", state.meta.instruction, state.meta.app)?;
    writeln!(out, "{HELP}")?;

    let mut lines = std::io::stdin().lock().lines();
    loop {
        if state.status == SessionStatus::Armed {
            begin(c, &id, &mut out)?;
            state = c.session(&id)?;
        }
        write!(out, "> ")?;
        out.flush()?;
        let Some(line) = lines.next().transpose()? else {
            c.close_session(&id)?;
            bail!("input ended before finish(); session {id} discarded");
        };
        let line = line.trim();
        let request = match line.split_once(' ').map_or((line, ""), |(a, b)| (a, b.trim())) {
            ("", _) => continue,
            (":abort", _) => {
                c.close_session(&id)?;
                bail!("session {id} discarded");
            }
            (":shot", file) if !file.is_empty() => {
                std::fs::write(file, c.screenshot(&id)?).with_context(|| format!("writing {file}"))?;
                continue;
            }
            (":gesture", _) => CommitRequest::Capture { timeout_ms: Some(args.gesture_timeout * 1000) },
            (":help", _) => {
                writeln!(out, "{HELP}")?;
                continue;
            }
            _ => CommitRequest::Action { action: line.to_string() },
        };
        match c.commit(&id, &request) {
            Ok(resp) => {
                match &resp.step {
                    Some(step) if step.flag.is_some() => writeln!(out, "recorded raw step {} (flagged for review)", step.step_index)?,
                    Some(_) => {}
                    None => writeln!(out, "no gesture within {}s", args.gesture_timeout)?,
                }
                state = resp.state;
                if let Some(path) = resp.trace_path {
                    writeln!(out, "trace written to {}", path.display())?;
                    return Ok(());
                }
            }
            Err(e) if recoverable(&e) => writeln!(out, "not recorded: {e}")?,
            Err(e) => return Err(e.into()),
        }
    }
}

#[derive(Debug, Args)]
pub struct TracesArgs {
    #[command(flatten)]
    local: LocalServer,
}

pub fn traces(server: Option<&str>, args: TracesArgs) -> Result<()> {
    let conn = connect(server, || args.local.config())?;
    for t in conn.client.traces()? {
        println!("{}\t{}\t{} steps\t{}\t{}", t.trace_id, t.app, t.steps, t.review.status, t.instruction);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReviewArgs {
    trace_id: String,
    /// verified or rejected; prints the current review when absent.
    #[arg(long)]
    verdict: Option<Verdict>,
    #[arg(long)]
    reviewer: Option<String>,
    #[arg(long)]
    note: Option<String>,
    #[command(flatten)]
    local: LocalServer,
}

pub fn review(server: Option<&str>, args: ReviewArgs) -> Result<()> {
    let conn = connect(server, || args.local.config())?;
    let review = match args.verdict {
        Some(v) => conn.client.submit_review(&args.trace_id, v, args.reviewer, args.note)?,
        None => conn.client.review(&args.trace_id)?,
    };
    println!("{}: {}", args.trace_id, review.status);
    if let Some(r) = &review.reviewer {
        println!("reviewer: {r}");
    }
    if let Some(n) = &review.note {
        println!("note: {n}");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory receiving one subdirectory of samples per trace.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "both")]
    mode: ExportMode,
    /// A single trace; all finished traces when absent.
    #[arg(long)]
    trace: Option<String>,
    /// Skip traces no reviewer has verified.
    #[arg(long)]
    verified_only: bool,
    /// TOML table of app id to resource ids whose text is redacted.
    #[arg(long)]
    redaction: Option<PathBuf>,
    #[command(flatten)]
    local: LocalServer,
}

pub fn export(server: Option<&str>, args: ExportArgs) -> Result<()> {
    let redaction = match &args.redaction {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(Redaction::from_toml(&text).with_context(|| format!("in {}", path.display()))?)
        }
        None => None,
    };
    let conn = connect(server, || args.local.config())?;
    let request = ExportRequest {
        out_dir: absolute(&args.out),
        mode: args.mode,
        trace_id: args.trace.clone(),
        verified_only: args.verified_only,
        redaction,
    };
    let summaries = conn.client.export(&request)?;
    for s in &summaries {
        println!("{}\txml {}\tsom {}\texcluded {}", s.trace_id, s.xml_samples, s.som_samples, s.excluded.len());
        for e in &s.excluded {
            eprintln!("  step {} excluded: {}", e.step_index, e.reason);
        }
    }
    if summaries.is_empty() {
        eprintln!("no traces exported");
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[arg(long)]
    app: String,
    /// Seed instruction; repeatable.
    #[arg(long = "seed")]
    seeds: Vec<String>,
    /// File with one seed instruction per line.
    #[arg(long)]
    seeds_file: Option<PathBuf>,
    /// Candidates wanted.
    #[arg(short, long, default_value_t = 5)]
    n: usize,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    local: LocalServer,
}

pub fn expand(server: Option<&str>, args: ExpandArgs) -> Result<()> {
    let mut seeds = args.seeds.clone();
    if let Some(path) = &args.seeds_file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        seeds.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string));
    }
    if server.is_some() && args.model.any() {
        log::warn!("model flags are ignored with --server; the service's own model is used");
    }
    let conn = connect(server, || {
        let mut cfg = args.local.config();
        let mut endpoint = ModelEndpoint::default();
        args.model.apply(&mut endpoint);
        cfg.expander = Some(Expander::Endpoint(endpoint));
        cfg
    })?;
    let expansion = conn.client.expand(seeds, &args.app, args.n)?;
    for c in &expansion.candidates {
        println!("{}", c.instruction);
    }
    eprintln!(
        "{} of {} candidates, {} duplicates dropped; all await review",
        expansion.candidates.len(),
        expansion.requested,
        expansion.duplicates
    );
    Ok(())
}

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use droidharness_core::agent::{Framework, Mode};
use droidharness_core::api::RunState;
use droidharness_core::bench::{AgentSpec, SuiteConfig};
use droidharness_core::device::Backend;
use droidharness_core::metrics::ReportFormat;
use droidharness_server::ServerConfig;

use crate::{absolute, connect, ModelArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AgentKind {
    Llm,
    Oracle,
    Random,
}

/// Every flag overrides the matching field of `--config`.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// Suite config file (TOML); flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// A task file or a directory of them.
    #[arg(long)]
    suite: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    framework: Option<Framework>,
    #[arg(long)]
    device: Option<Backend>,
    #[arg(long)]
    serial: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Seconds to wait after each action.
    #[arg(long)]
    step_interval: Option<f64>,
    /// Episodes run concurrently, one device each.
    #[arg(long)]
    parallel: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep tasks that already have a result under `--out`.
    #[arg(long)]
    resume: bool,
    #[arg(long, value_enum)]
    agent: Option<AgentKind>,
    /// Seed of the random agent.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Most recent steps shown to the model.
    #[arg(long)]
    history_window: Option<usize>,
    #[command(flatten)]
    model: ModelArgs,
    /// Format of the printed report.
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

impl RunArgs {
    fn suite_config(&self) -> Result<SuiteConfig> {
        let mut cfg = match (&self.config, &self.suite) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                SuiteConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
            }
            (None, Some(suite)) => SuiteConfig::new(suite, "runs/latest"),
            (None, None) => bail!("give --suite or --config"),
        };
        if let Some(s) = &self.suite {
            cfg.tasks = s.clone();
        }
        if let Some(m) = self.mode {
            cfg.episode.mode = m;
        }
        if let Some(f) = self.framework {
            cfg.episode.framework = f;
        }
        if let Some(b) = self.device {
            cfg.device.backend = b;
        }
        if let Some(s) = &self.serial {
            cfg.device.serial = Some(s.clone());
        }
        if let Some(n) = self.max_steps {
            cfg.episode.max_steps = n;
        }
        if let Some(s) = self.step_interval {
            cfg.device.step_interval = s;
        }
        if let Some(p) = self.parallel {
            cfg.parallelism = p;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.resume {
            cfg.resume = true;
        }
        match self.agent {
            Some(AgentKind::Llm) => cfg.agent = AgentSpec::Llm,
            Some(AgentKind::Oracle) => cfg.agent = AgentSpec::Oracle,
            Some(AgentKind::Random) => cfg.agent = AgentSpec::Random { seed: self.seed },
            None => {}
        }
        if let Some(t) = &self.templates {
            cfg.episode.templates_dir = Some(t.clone());
        }
        if let Some(h) = self.history_window {
            cfg.episode.history_window = Some(h);
        }
        self.model.apply(&mut cfg.episode.model);

        cfg.tasks = absolute(&cfg.tasks);
        cfg.output_dir = absolute(&cfg.output_dir);
        cfg.episode.templates_dir = cfg.episode.templates_dir.as_deref().map(absolute);
        cfg.device.sim_apps_dir = cfg.device.sim_apps_dir.as_deref().map(absolute);
        Ok(cfg)
    }
}

pub fn run(server: Option<&str>, args: RunArgs) -> Result<()> {
    let cfg = args.suite_config()?;
    let conn = connect(server, || ServerConfig::new(absolute("traces".as_ref())))?;
    let c = &conn.client;
    let started = c.start_run(&cfg)?;
    eprintln!("{}: {} tasks -> {}", started.run_id, started.total, started.output_dir.display());
    let mut shown = usize::MAX;
    let status = c.wait_run(&started.run_id, Duration::from_millis(250), |s| {
        if s.completed != shown {
            shown = s.completed;
            eprintln!("[{}/{}]", s.completed, s.total);
        }
    })?;
    if status.state == RunState::Failed {
        bail!("run failed: {}", status.error.unwrap_or_default());
    }
    let report = c.report(&cfg.output_dir, args.format)?;
    print!("{}", ensure_newline(report.text));
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// A task file or a directory of them.
    #[arg(long)]
    suite: PathBuf,
    /// Skip checking app ids and fixtures against the simulator apps.
    #[arg(long)]
    no_sim_apps: bool,
}

pub fn validate(server: Option<&str>, args: ValidateArgs) -> Result<()> {
    let conn = connect(server, || ServerConfig::new(absolute("traces".as_ref())))?;
    let diags = conn.client.validate_suite(&absolute(&args.suite), !args.no_sim_apps)?.diagnostics;
    for d in &diags {
        println!("{d}");
    }
    if !diags.is_empty() {
        bail!("{} problem(s) in {}", diags.len(), args.suite.display());
    }
    eprintln!("{}: ok", args.suite.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a run.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "table")]
    format: ReportFormat,
}

pub fn report(server: Option<&str>, args: ReportArgs) -> Result<()> {
    let conn = connect(server, || ServerConfig::new(absolute("traces".as_ref())))?;
    let report = conn.client.report(&absolute(&args.out), args.format)?;
    print!("{}", ensure_newline(report.text));
    Ok(())
}

fn ensure_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

//! `droidharness`: runs suites, reports metrics and records demonstrations
//! through the HTTP service, either a remote one or one started in-process.

mod bench;
mod record;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use droidharness_client::Client;
use droidharness_core::agent::ModelEndpoint;
use droidharness_core::device::Backend;
use droidharness_core::DeviceConfig;
use droidharness_server::{BackgroundServer, Expander, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "droidharness", version, about = "Evaluate and train Android GUI agents")]
struct Cli {
    /// Service to talk to; without it a private server runs in-process.
    #[arg(long, global = true, env = "DROIDHARNESS_SERVER")]
    server: Option<String>,
    /// Debug logging, including model request and response bodies.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Run a task suite and print its report.
    Run(bench::RunArgs),
    /// Check task files without running them.
    Validate(bench::ValidateArgs),
    /// Recompute the report of a finished run.
    Report(bench::ReportArgs),
    /// Record a demonstration interactively.
    Record(record::RecordArgs),
    /// List recorded traces.
    Traces(record::TracesArgs),
    /// Show or set the review verdict of a trace.
    Review(record::ReviewArgs),
    /// Turn recorded traces into training samples.
    Export(record::ExportArgs),
    /// Ask a model for new task instructions in the style of seed ones.
    Expand(record::ExpandArgs),
}

/// Settings of a server started by this process. Ignored with `--server`.
#[derive(Debug, Clone, Args)]
struct LocalServer {
    /// Directory holding recorded traces.
    #[arg(long, default_value = "traces")]
    traces: PathBuf,
    /// Device used for recording.
    #[arg(long, default_value = "sim")]
    device: Backend,
    /// ADB serial of the recording device.
    #[arg(long)]
    serial: Option<String>,
    /// Seconds to wait after each recorded action.
    #[arg(long)]
    step_interval: Option<f64>,
    /// Extra simulator app definitions.
    #[arg(long)]
    sim_apps: Option<PathBuf>,
}

impl LocalServer {
    fn config(&self) -> ServerConfig {
        let mut device = DeviceConfig { backend: self.device, serial: self.serial.clone(), ..DeviceConfig::default() };
        if let Some(s) = self.step_interval {
            device.step_interval = s;
        }
        device.sim_apps_dir = self.sim_apps.as_deref().map(absolute);
        let mut cfg = ServerConfig::new(absolute(&self.traces));
        cfg.device = device;
        cfg
    }
}

/// Chat-completion endpoint flags.
#[derive(Debug, Clone, Args)]
struct ModelArgs {
    /// Model name sent to the endpoint.
    #[arg(long)]
    model: Option<String>,
    /// Base URL up to and excluding `/chat/completions`.
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key; empty for none.
    #[arg(long)]
    api_key_env: Option<String>,
}

impl ModelArgs {
    fn any(&self) -> bool {
        self.model.is_some() || self.base_url.is_some() || self.api_key_env.is_some()
    }

    fn apply(&self, endpoint: &mut ModelEndpoint) {
        if let Some(m) = &self.model {
            endpoint.model = m.clone();
        }
        if let Some(u) = &self.base_url {
            endpoint.base_url = u.clone();
        }
        if let Some(k) = &self.api_key_env {
            endpoint.api_key_env = (!k.is_empty()).then(|| k.clone());
        }
    }
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: SocketAddr,
    #[command(flatten)]
    local: LocalServer,
    /// Model for task expansion.
    #[command(flatten)]
    model: ModelArgs,
}

/// A client plus the in-process server backing it, if any.
struct Connection {
    client: Client,
    _local: Option<BackgroundServer>,
}

fn connect(server: Option<&str>, local: impl FnOnce() -> ServerConfig) -> Result<Connection> {
    match server {
        Some(url) => {
            let client = Client::new(url)?;
            client.health().with_context(|| format!("no droidharness service at {url}"))?;
            Ok(Connection { client, _local: None })
        }
        None => {
            let bg = BackgroundServer::start(local()).context("starting the in-process server")?;
            log::debug!("in-process server at {}", bg.url());
            let client = Client::new(bg.url())?;
            Ok(Connection { client, _local: Some(bg) })
        }
    }
}

/// Paths travel to the server, whose working directory may differ.
fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn serve(args: ServeArgs) -> Result<()> {
    let mut config = args.local.config();
    if args.model.any() {
        let mut endpoint = ModelEndpoint::default();
        args.model.apply(&mut endpoint);
        config.expander = Some(Expander::Endpoint(endpoint));
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await.with_context(|| format!("binding {}", args.addr))?;
        eprintln!("droidharness listening on http://{}", listener.local_addr()?);
        droidharness_server::serve(listener, config).await?;
        Ok(())
    })
}

fn main() {
    let cli = Cli::parse();
    let default_level = match (&cli.command, cli.verbose) {
        (_, true) => "debug",
        (Command::Serve(_), false) => "info",
        _ => "warn",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();

    let server = cli.server.as_deref();
    let outcome = match cli.command {
        Command::Serve(args) => serve(args),
        Command::Run(args) => bench::run(server, args),
        Command::Validate(args) => bench::validate(server, args),
        Command::Report(args) => bench::report(server, args),
        Command::Record(args) => record::record(server, args),
        Command::Traces(args) => record::traces(server, args),
        Command::Review(args) => record::review(server, args),
        Command::Export(args) => record::export(server, args),
        Command::Expand(args) => record::expand(server, args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

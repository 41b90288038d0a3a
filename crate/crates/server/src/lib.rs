//! HTTP/JSON service over the harness core: suite runs and reports, UI and
//! action utilities, and the demonstration recorder with its review and
//! export endpoints.

mod error;
mod runs;
mod sessions;
mod tools;
mod traces;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Mutex, RwLock};

use axum::routing::{get, post};
use axum::Router;
use droidharness_core::agent::{EndpointError, HttpChatClient, LlmClient, ModelEndpoint, Templates};
use droidharness_core::DeviceConfig;
use tokio::net::TcpListener;

pub use error::ApiError;

/// Source of the model used for task expansion.
#[derive(Clone)]
pub enum Expander {
    Endpoint(ModelEndpoint),
    Client(Arc<dyn LlmClient>),
}

impl Expander {
    fn client(&self) -> Result<Arc<dyn LlmClient>, EndpointError> {
        match self {
            Expander::Endpoint(e) => Ok(Arc::new(HttpChatClient::new(e.clone())?)),
            Expander::Client(c) => Ok(c.clone()),
        }
    }
}

#[derive(Clone)]
pub struct ServerConfig {
    /// Directory holding one subdirectory per recording session.
    pub traces_root: PathBuf,
    /// Device used by recording sessions.
    pub device: DeviceConfig,
    pub templates: Templates,
    pub expander: Option<Expander>,
}

impl ServerConfig {
    pub fn new(traces_root: impl Into<PathBuf>) -> Self {
        Self {
            traces_root: traces_root.into(),
            device: DeviceConfig::sim(),
            templates: Templates::default(),
            expander: None,
        }
    }
}

pub(crate) struct AppState {
    config: ServerConfig,
    sessions: RwLock<HashMap<String, Arc<sessions::SessionSlot>>>,
    runs: RwLock<HashMap<String, Arc<Mutex<droidharness_core::api::RunStatus>>>>,
    next_run: AtomicU64,
}

pub(crate) type Shared = Arc<AppState>;

pub fn router(config: ServerConfig) -> Router {
    let state = Arc::new(AppState {
        config,
        sessions: RwLock::new(HashMap::new()),
        runs: RwLock::new(HashMap::new()),
        next_run: AtomicU64::new(1),
    });
    Router::new()
        .route("/health", get(tools::health))
        .route("/ui/compress", post(tools::compress))
        .route("/actions/parse", post(tools::parse_action))
        .route("/suites/validate", post(tools::validate))
        .route("/report", post(tools::report))
        .route("/runs", post(runs::start).get(runs::list))
        .route("/runs/{id}", get(runs::status))
        .route("/sessions", post(sessions::create).get(sessions::list))
        .route("/sessions/{id}", get(sessions::state).delete(sessions::remove))
        .route("/sessions/{id}/claim", post(sessions::claim))
        .route("/sessions/{id}/begin", post(sessions::begin))
        .route("/sessions/{id}/commit", post(sessions::commit))
        .route("/sessions/{id}/finish", post(sessions::finish))
        .route("/sessions/{id}/screenshot", get(sessions::screenshot))
        .route("/traces", get(traces::list))
        .route("/traces/{id}", get(traces::get))
        .route("/traces/{id}/screenshots/{step}", get(traces::screenshot))
        .route("/traces/{id}/review", get(traces::review).post(traces::submit))
        .route("/export", post(traces::export))
        .route("/expand", post(traces::expand))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, config: ServerConfig) -> std::io::Result<()> {
    std::fs::create_dir_all(&config.traces_root)?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(config))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server on its own runtime thread, for tests and for CLI commands run
/// without a remote service. Stops when dropped.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Binds an ephemeral port on 127.0.0.1.
    pub fn start(config: ServerConfig) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("droidharness-server".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = match TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => {
                        log::error!("cannot adopt listener: {e}");
                        return;
                    }
                };
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, router(config)).with_graceful_shutdown(shutdown).await {
                    log::error!("server stopped: {e}");
                }
            });
            // Background suite runs are abandoned rather than awaited.
            runtime.shutdown_timeout(std::time::Duration::from_secs(1));
        })?;
        Ok(Self { addr, shutdown: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Ids that name a directory directly under a server-managed root.
pub(crate) fn check_id(id: &str) -> Result<(), ApiError> {
    if !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        Ok(())
    } else {
        Err(ApiError::invalid(format!("{id:?} is not a valid id")))
    }
}

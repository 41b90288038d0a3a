//! Blocking client for the droidharness HTTP service.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex, PoisonError};
use std::time::Duration;

use droidharness_core::api::{
    CommitRequest, CommitResponse, CompressRequest, ErrorBody, ExpandRequest, ExportRequest, FinishRequest, Health,
    ParseActionRequest, ParseActionResponse, ReportRequest, ReportResponse, ReviewRequest, RunStatus, SessionControl,
    SessionSummary, ValidateRequest, ValidateResponse, CONTROL_HEADER,
};
use droidharness_core::bench::SuiteConfig;
use droidharness_core::metrics::ReportFormat;
use droidharness_core::recorder::{
    ExportSummary, Expansion, RecordedTrace, Review, SessionOptions, SessionState, TouchEvent, TraceSummary, Verdict,
};
use droidharness_core::CompressedView;
use reqwest::blocking::{Client as Http, RequestBuilder};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{message} ({status} {code})")]
    Api { status: u16, code: String, message: String, review: Option<Review> },
    #[error("cannot reach {url}: {message}")]
    Transport { url: String, message: String },
    #[error("unexpected response from {url}: {message}")]
    Decode { url: String, message: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Cloned clients share their session control tokens.
#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: Http,
    tokens: Arc<Mutex<HashMap<String, String>>>,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Result<Self, ClientError> {
        let base = base_url.into().trim_end_matches('/').to_string();
        let http = Http::builder()
            .timeout(DEFAULT_TIMEOUT)
            .build()
            .map_err(|e| ClientError::Transport { url: base.clone(), message: e.to_string() })?;
        Ok(Self { base, http, tokens: Arc::default() })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn request(&self, method: Method, path: &str) -> (String, RequestBuilder) {
        let url = format!("{}{path}", self.base);
        let rb = self.http.request(method, &url);
        (url, rb)
    }

    /// A request on a session that carries its control token, if held.
    fn controlled(&self, method: Method, id: &str, suffix: &str) -> (String, RequestBuilder) {
        let (url, mut rb) = self.request(method, &format!("/sessions/{id}{suffix}"));
        if let Some(token) = self.token(id) {
            rb = rb.header(CONTROL_HEADER, token);
        }
        (url, rb)
    }

    pub fn token(&self, session_id: &str) -> Option<String> {
        self.tokens.lock().unwrap_or_else(PoisonError::into_inner).get(session_id).cloned()
    }

    /// Uses a control token obtained elsewhere.
    pub fn set_token(&self, session_id: &str, token: impl Into<String>) {
        self.tokens.lock().unwrap_or_else(PoisonError::into_inner).insert(session_id.into(), token.into());
    }

    fn keep_control(&self, control: SessionControl) -> SessionState {
        self.set_token(&control.state.meta.session_id, control.token);
        control.state
    }

    fn send(url: &str, rb: RequestBuilder) -> Result<reqwest::blocking::Response, ClientError> {
        let resp = rb.send().map_err(|e| ClientError::Transport { url: url.into(), message: e.to_string() })?;
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().unwrap_or_default();
        Err(match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => ClientError::Api {
                status: status.as_u16(),
                code: body.error.code,
                message: body.error.message,
                review: body.error.review,
            },
            Err(_) => ClientError::Api { status: status.as_u16(), code: "http".into(), message: text, review: None },
        })
    }

    fn json<T: DeserializeOwned>(url: &str, rb: RequestBuilder) -> Result<T, ClientError> {
        let resp = Self::send(url, rb)?;
        resp.json().map_err(|e| ClientError::Decode { url: url.into(), message: e.to_string() })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let (url, rb) = self.request(Method::GET, path);
        Self::json(&url, rb)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let (url, rb) = self.request(Method::POST, path);
        Self::json(&url, rb.json(body))
    }

    fn bytes(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let (url, rb) = self.request(Method::GET, path);
        let resp = Self::send(&url, rb)?;
        resp.bytes().map(|b| b.to_vec()).map_err(|e| ClientError::Decode { url, message: e.to_string() })
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        self.get("/health")
    }

    pub fn compress(&self, xml: &str, screen_width: u32, screen_height: u32) -> Result<CompressedView, ClientError> {
        self.post("/ui/compress", &CompressRequest { xml: xml.into(), screen_width, screen_height })
    }

    pub fn parse_action(&self, text: &str) -> Result<ParseActionResponse, ClientError> {
        self.post("/actions/parse", &ParseActionRequest { text: text.into() })
    }

    pub fn validate_suite(&self, path: &Path, sim_apps: bool) -> Result<ValidateResponse, ClientError> {
        self.post("/suites/validate", &ValidateRequest { path: path.to_path_buf(), sim_apps })
    }

    pub fn start_run(&self, config: &SuiteConfig) -> Result<RunStatus, ClientError> {
        self.post("/runs", config)
    }

    pub fn run_status(&self, run_id: &str) -> Result<RunStatus, ClientError> {
        self.get(&format!("/runs/{run_id}"))
    }

    pub fn runs(&self) -> Result<Vec<RunStatus>, ClientError> {
        self.get("/runs")
    }

    /// Polls until the run leaves the running state, calling `on_status`
    /// after every poll.
    pub fn wait_run(
        &self,
        run_id: &str,
        interval: Duration,
        mut on_status: impl FnMut(&RunStatus),
    ) -> Result<RunStatus, ClientError> {
        loop {
            let status = self.run_status(run_id)?;
            on_status(&status);
            if status.state != droidharness_core::api::RunState::Running {
                return Ok(status);
            }
            std::thread::sleep(interval);
        }
    }

    pub fn report(&self, output_dir: &Path, format: ReportFormat) -> Result<ReportResponse, ClientError> {
        self.post("/report", &ReportRequest { output_dir: output_dir.to_path_buf(), format })
    }

    /// Creates a session and keeps its control token for later mutations.
    pub fn create_session(&self, options: &SessionOptions) -> Result<SessionState, ClientError> {
        let control: SessionControl = self.post("/sessions", options)?;
        Ok(self.keep_control(control))
    }

    /// Takes control of a session; its previous controller becomes read-only.
    pub fn claim_session(&self, id: &str) -> Result<SessionState, ClientError> {
        let control: SessionControl = self.post(&format!("/sessions/{id}/claim"), &serde_json::json!({}))?;
        Ok(self.keep_control(control))
    }

    pub fn sessions(&self) -> Result<Vec<SessionSummary>, ClientError> {
        self.get("/sessions")
    }

    pub fn session(&self, id: &str) -> Result<SessionState, ClientError> {
        self.get(&format!("/sessions/{id}"))
    }

    /// Long-polls for a revision newer than `since`, up to `wait`.
    pub fn wait_session(&self, id: &str, since: u64, wait: Duration) -> Result<SessionState, ClientError> {
        let path = format!("/sessions/{id}?since={since}&wait_ms={}", wait.as_millis());
        let (url, rb) = self.request(Method::GET, &path);
        Self::json(&url, rb.timeout(wait + DEFAULT_TIMEOUT))
    }

    pub fn begin_step(&self, id: &str) -> Result<SessionState, ClientError> {
        let (url, rb) = self.controlled(Method::POST, id, "/begin");
        Self::json(&url, rb.json(&serde_json::json!({})))
    }

    pub fn commit(&self, id: &str, request: &CommitRequest) -> Result<CommitResponse, ClientError> {
        let (url, mut rb) = self.controlled(Method::POST, id, "/commit");
        if let CommitRequest::Capture { timeout_ms } = request {
            rb = rb.timeout(Duration::from_millis(timeout_ms.unwrap_or(30_000)) + DEFAULT_TIMEOUT);
        }
        Self::json(&url, rb.json(request))
    }

    /// Commits a step given in the action grammar, e.g. `tap(3)`.
    pub fn commit_action(&self, id: &str, action: &str) -> Result<CommitResponse, ClientError> {
        self.commit(id, &CommitRequest::Action { action: action.into() })
    }

    pub fn commit_gesture(&self, id: &str, events: Vec<TouchEvent>) -> Result<CommitResponse, ClientError> {
        self.commit(id, &CommitRequest::Gesture { events })
    }

    pub fn finish_session(&self, id: &str, answer: Option<String>) -> Result<CommitResponse, ClientError> {
        let (url, rb) = self.controlled(Method::POST, id, "/finish");
        Self::json(&url, rb.json(&FinishRequest { answer }))
    }

    /// PNG of the live device screen.
    pub fn screenshot(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        self.bytes(&format!("/sessions/{id}/screenshot"))
    }

    pub fn close_session(&self, id: &str) -> Result<(), ClientError> {
        let (url, rb) = self.controlled(Method::DELETE, id, "");
        Self::send(&url, rb).map(|_| ())
    }

    pub fn traces(&self) -> Result<Vec<TraceSummary>, ClientError> {
        self.get("/traces")
    }

    pub fn trace(&self, id: &str) -> Result<RecordedTrace, ClientError> {
        self.get(&format!("/traces/{id}"))
    }

    pub fn trace_screenshot(&self, id: &str, step: usize) -> Result<Vec<u8>, ClientError> {
        self.bytes(&format!("/traces/{id}/screenshots/{step}"))
    }

    pub fn review(&self, id: &str) -> Result<Review, ClientError> {
        self.get(&format!("/traces/{id}/review"))
    }

    pub fn submit_review(
        &self,
        id: &str,
        verdict: Verdict,
        reviewer: Option<String>,
        note: Option<String>,
    ) -> Result<Review, ClientError> {
        self.post(&format!("/traces/{id}/review"), &ReviewRequest { verdict, reviewer, note })
    }

    pub fn export(&self, request: &ExportRequest) -> Result<Vec<ExportSummary>, ClientError> {
        self.post("/export", request)
    }

    pub fn expand(&self, seeds: Vec<String>, app: &str, n: usize) -> Result<Expansion, ClientError> {
        self.post("/expand", &ExpandRequest { seeds, app: app.into(), n })
    }
}

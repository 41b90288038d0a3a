//! Chat-completion clients: an HTTP endpoint, a scripted replayer and a
//! seeded random baseline.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ui_tree::parse_rendering;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    /// PNG bytes.
    Image(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self { role, parts: vec![ContentPart::Text(text.into())] }
    }

    pub fn image_count(&self) -> usize {
        self.parts.iter().filter(|p| matches!(p, ContentPart::Image(_))).count()
    }

    /// Text parts joined by newlines.
    pub fn joined_text(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }

    /// OpenAI-style message object; images become PNG data URLs.
    pub fn to_json(&self) -> Value {
        if let [ContentPart::Text(t)] = self.parts.as_slice() {
            return json!({"role": self.role, "content": t});
        }
        let parts: Vec<Value> = self
            .parts
            .iter()
            .map(|p| match p {
                ContentPart::Text(t) => json!({"type": "text", "text": t}),
                ContentPart::Image(png) => json!({
                    "type": "image_url",
                    "image_url": {"url": format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png))}
                }),
            })
            .collect();
        json!({"role": self.role, "content": parts})
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EndpointError {
    #[error("model endpoint failed after {attempts} attempts: {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("model endpoint rejected the request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("unexpected model endpoint response: {0}")]
    BadResponse(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("scripted client has no replies left")]
    ScriptExhausted,
}

/// A chat model. Implementations must tolerate concurrent calls.
pub trait LlmClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError>;
}

/// Where to reach a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoint {
    /// Base URL up to and excluding `/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token, if the endpoint needs one.
    #[serde(default)]
    pub api_key_env: Option<String>,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
        }
    }
}

/// OpenAI-compatible `/chat/completions` client with greedy decoding.
pub struct HttpChatClient {
    endpoint: ModelEndpoint,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    /// Retries after the first attempt for transport errors, 429 and 5xx.
    pub max_retries: u32,
    /// Delay before the first retry; doubles after each.
    pub backoff: Duration,
}

impl HttpChatClient {
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, EndpointError> {
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| EndpointError::MissingCredential(var.clone()))?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(180))
            .build()
            .map_err(|e| EndpointError::BadResponse(e.to_string()))?;
        Ok(Self { endpoint, api_key, http, max_retries: 3, backoff: Duration::from_millis(500) })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &Value) -> Result<String, (bool, EndpointError)> {
        let mut req = self.http.post(self.url()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, EndpointError::BadResponse(e.to_string())))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| (true, EndpointError::BadResponse(e.to_string())))?;
        log::debug!("model response {status}: {text}");
        if status.is_server_error() || status.as_u16() == 429 {
            return Err((true, EndpointError::Rejected { status: status.as_u16(), message: text }));
        }
        if !status.is_success() {
            return Err((false, EndpointError::Rejected { status: status.as_u16(), message: text }));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| (false, EndpointError::BadResponse(e.to_string())))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (false, EndpointError::BadResponse(format!("no choices[0].message.content in {text}"))))
    }
}

/// The request body with inline image data replaced by its length.
fn without_images(body: &Value) -> Value {
    let mut body = body.clone();
    if let Some(messages) = body.get_mut("messages").and_then(Value::as_array_mut) {
        for part in messages.iter_mut().filter_map(|m| m.get_mut("content")).filter_map(Value::as_array_mut).flatten() {
            if let Some(url) = part.pointer_mut("/image_url/url") {
                let len = url.as_str().map_or(0, str::len);
                *url = Value::String(format!("<{len} bytes of image data>"));
            }
        }
    }
    body
}

impl LlmClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": messages.iter().map(ChatMessage::to_json).collect::<Vec<_>>(),
            "temperature": 0,
        });
        if log::log_enabled!(log::Level::Debug) {
            log::debug!("model request: {}", without_images(&body));
        }
        let mut delay = self.backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(reply) => return Ok(reply),
                Err((true, e)) if attempts <= self.max_retries => {
                    log::warn!("model call failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err((true, e)) => return Err(EndpointError::Exhausted { attempts, message: e.to_string() }),
                Err((false, e)) => return Err(e),
            }
        }
    }
}

/// Replays canned replies in order.
pub struct ScriptedClient {
    replies: Mutex<VecDeque<String>>,
    /// Reply used once the script runs out; `None` makes that an error.
    fallback: Option<String>,
}

impl ScriptedClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { replies: Mutex::new(replies.into_iter().map(Into::into).collect()), fallback: None }
    }

    /// A client that gives `reply` to every call.
    pub fn repeating(reply: impl Into<String>) -> Self {
        Self { replies: Mutex::new(VecDeque::new()), fallback: Some(reply.into()) }
    }

    pub fn with_fallback(mut self, reply: impl Into<String>) -> Self {
        self.fallback = Some(reply.into());
        self
    }

    pub fn remaining(&self) -> usize {
        self.replies.lock().unwrap().len()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, _messages: &[ChatMessage]) -> Result<String, EndpointError> {
        match self.replies.lock().unwrap().pop_front() {
            Some(r) => Ok(r),
            None => self.fallback.clone().ok_or(EndpointError::ScriptExhausted),
        }
    }
}

/// Uniform-random baseline. It reads the element list from a text
/// observation when one is present, and otherwise guesses indices below 16.
pub struct RandomClient {
    rng: Mutex<ChaCha8Rng>,
}

impl RandomClient {
    pub fn new(seed: u64) -> Self {
        Self { rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)) }
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";
    let len = rng.gen_range(3..10);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char).collect()
}

impl LlmClient for RandomClient {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, EndpointError> {
        let count = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| parse_rendering(&m.joined_text()).len())
            .filter(|&n| n > 0)
            .unwrap_or(16);
        let mut rng = self.rng.lock().unwrap();
        let element = rng.gen_range(0..count);
        let roll = rng.gen_range(0..100);
        let reply = match roll {
            0..=49 => format!("tap(element={element})"),
            50..=54 => format!("long_press(element={element})"),
            55..=64 => {
                let dir = ["up", "down", "left", "right"][rng.gen_range(0..4)];
                let dist = ["short", "medium", "long"][rng.gen_range(0..3)];
                format!("swipe(element={element}, direction=\"{dir}\", distance=\"{dist}\")")
            }
            65..=79 => format!("type(text=\"{}\")", random_word(&mut rng)),
            80..=87 => "back()".to_string(),
            88..=89 => "home()".to_string(),
            _ => format!("finish(answer=\"{}\")", random_word(&mut rng)),
        };
        Ok(reply)
    }
}

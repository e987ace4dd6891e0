//! Role-based access to chat-completion backends.
//!
//! Three roles ([`LlmRole`]) are bound to backends through a [`Gateway`],
//! which owns retry and backoff. [`HttpBackend`] speaks the chat-completions
//! JSON shape; [`ScriptedBackend`] replays per-role queues for tests.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmRole {
    Extractor,
    Answerer,
    Critic,
}

impl LlmRole {
    pub const ALL: [LlmRole; 3] = [LlmRole::Extractor, LlmRole::Answerer, LlmRole::Critic];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Extractor => "extractor",
            Self::Answerer => "answerer",
            Self::Critic => "critic",
        }
    }
}

impl fmt::Display for LlmRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: ChatRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: ChatRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: ChatRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoleSettings {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RoleSettings {
    fn default() -> Self {
        Self { model: "default".into(), temperature: 0.2, max_tokens: 1024 }
    }
}

/// Body of `POST {endpoint}/chat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
}

/// Failure of a single backend call.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timed out")]
    Timeout,
    #[error("status {0}")]
    Status(u16),
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("script exhausted")]
    ScriptExhausted,
}

impl BackendError {
    fn retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::Timeout)
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    fn chat(&self, role: LlmRole, request: &ChatRequest) -> Result<String, BackendError>;
}

/// Failure of [`Gateway::complete`] after retries.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("{role} timed out after {attempts} attempts")]
    Timeout { role: LlmRole, attempts: u32 },
    #[error("{role} transport failed after {attempts} attempts: {last}")]
    TransportExhausted { role: LlmRole, attempts: u32, last: String },
    #[error("{role} backend returned status {status}")]
    Status { role: LlmRole, status: u16 },
    #[error("{role} backend response unusable: {detail}")]
    InvalidResponse { role: LlmRole, detail: String },
    #[error("{role} script exhausted")]
    ScriptExhausted { role: LlmRole },
    #[error("{role} role is not configured")]
    Unconfigured { role: LlmRole },
    #[error("message content is empty")]
    EmptyMessage,
}

impl LlmError {
    /// Short machine-readable kind used in event payloads.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Timeout { .. } => "timeout",
            Self::TransportExhausted { .. } => "transport_exhausted",
            Self::Status { .. } => "status",
            Self::InvalidResponse { .. } => "invalid_response",
            Self::ScriptExhausted { .. } => "script_exhausted",
            Self::Unconfigured { .. } => "unconfigured",
            Self::EmptyMessage => "empty_message",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_backoff: Duration::from_millis(250) }
    }
}

#[derive(Clone)]
struct RoleBinding {
    backend: Arc<dyn ChatBackend>,
    settings: RoleSettings,
}

#[derive(Clone)]
pub struct Gateway {
    roles: HashMap<LlmRole, RoleBinding>,
    retry: RetryPolicy,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut roles: Vec<_> = self.roles.iter().map(|(r, b)| (*r, b.backend.id().to_owned())).collect();
        roles.sort();
        f.debug_struct("Gateway").field("roles", &roles).field("retry", &self.retry).finish()
    }
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder { roles: HashMap::new(), retry: RetryPolicy::default() }
    }

    /// All three roles on one backend with default settings.
    pub fn uniform(backend: Arc<dyn ChatBackend>) -> Self {
        let mut b = Self::builder();
        for role in LlmRole::ALL {
            b = b.role(role, backend.clone(), RoleSettings::default());
        }
        b.build().expect("all roles bound")
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn complete(&self, role: LlmRole, messages: &[ChatMessage]) -> Result<Completion, LlmError> {
        let binding = self.roles.get(&role).ok_or(LlmError::Unconfigured { role })?;
        if messages
            .iter()
            .any(|m| m.role != ChatRole::System && m.content.trim().is_empty())
        {
            return Err(LlmError::EmptyMessage);
        }
        let request = ChatRequest {
            model: binding.settings.model.clone(),
            messages: messages.to_vec(),
            temperature: binding.settings.temperature,
            max_tokens: binding.settings.max_tokens,
        };
        let started = Instant::now();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match binding.backend.chat(role, &request) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_id: binding.backend.id().to_owned(),
                    })
                }
                Err(err) if err.retryable() && attempts <= self.retry.max_retries => {
                    let backoff = self.retry.base_backoff * 2u32.pow(attempts - 1);
                    tracing::debug!(%role, attempts, ?backoff, %err, "retrying llm call");
                    thread::sleep(backoff);
                }
                Err(BackendError::Timeout) => return Err(LlmError::Timeout { role, attempts }),
                Err(BackendError::Transport(last)) => {
                    return Err(LlmError::TransportExhausted { role, attempts, last })
                }
                Err(BackendError::Status(status)) => return Err(LlmError::Status { role, status }),
                Err(BackendError::InvalidResponse(detail)) => {
                    return Err(LlmError::InvalidResponse { role, detail })
                }
                Err(BackendError::ScriptExhausted) => return Err(LlmError::ScriptExhausted { role }),
            }
        }
    }
}

pub struct GatewayBuilder {
    roles: HashMap<LlmRole, RoleBinding>,
    retry: RetryPolicy,
}

impl GatewayBuilder {
    pub fn role(mut self, role: LlmRole, backend: Arc<dyn ChatBackend>, settings: RoleSettings) -> Self {
        self.roles.insert(role, RoleBinding { backend, settings });
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn build(self) -> Result<Gateway, LlmError> {
        for role in LlmRole::ALL {
            if !self.roles.contains_key(&role) {
                return Err(LlmError::Unconfigured { role });
            }
        }
        Ok(Gateway { roles: self.roles, retry: self.retry })
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: ChatMessage,
}

/// Chat-completions backend over HTTP.
pub struct HttpBackend {
    id: String,
    url: String,
    bearer_token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(endpoint: &str, bearer_token: Option<String>) -> Self {
        Self::with_timeout(endpoint, bearer_token, Self::DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: &str, bearer_token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            id: endpoint.to_owned(),
            url: format!("{}/chat", endpoint.trim_end_matches('/')),
            bearer_token,
            agent,
        }
    }
}

impl ChatBackend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn chat(&self, _role: LlmRole, request: &ChatRequest) -> Result<String, BackendError> {
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.bearer_token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status(status));
        }
        let body: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::InvalidResponse("no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptStep {
    Respond(String),
    Fail(BackendError),
}

/// One line of a mock script file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptLine {
    pub role: LlmRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respond: Option<String>,
    /// `"transport"`, `"timeout"` or `"status:<code>"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScriptLine {
    pub fn step(&self) -> Result<ScriptStep, String> {
        match (&self.respond, &self.error) {
            (Some(text), None) => Ok(ScriptStep::Respond(text.clone())),
            (None, Some(err)) => parse_scripted_error(err).map(ScriptStep::Fail),
            _ => Err("exactly one of \"respond\" or \"error\" is required".into()),
        }
    }
}

fn parse_scripted_error(name: &str) -> Result<BackendError, String> {
    match name {
        "transport" => Ok(BackendError::Transport("scripted transport failure".into())),
        "timeout" => Ok(BackendError::Timeout),
        other => other
            .strip_prefix("status:")
            .and_then(|code| code.parse().ok())
            .map(BackendError::Status)
            .ok_or_else(|| format!("unknown scripted error {other:?}")),
    }
}

#[derive(Debug, Error)]
#[error("mock script line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub role: LlmRole,
    pub request: ChatRequest,
}

/// Deterministic backend replaying per-role queues. An empty queue answers
/// with [`BackendError::ScriptExhausted`].
#[derive(Default)]
pub struct ScriptedBackend {
    queues: Mutex<HashMap<LlmRole, VecDeque<ScriptStep>>>,
    calls: Mutex<Vec<RecordedCall>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ScriptError> {
        let backend = Self::new();
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let err = |message: String| ScriptError { line: i + 1, message };
            let line: ScriptLine = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
            backend.push_line(&line).map_err(err)?;
        }
        Ok(backend)
    }

    pub fn push_line(&self, line: &ScriptLine) -> Result<(), String> {
        self.push(line.role, line.step()?);
        Ok(())
    }

    pub fn push(&self, role: LlmRole, step: ScriptStep) {
        self.queues.lock().entry(role).or_default().push_back(step);
    }

    pub fn respond(&self, role: LlmRole, text: impl Into<String>) {
        self.push(role, ScriptStep::Respond(text.into()));
    }

    pub fn remaining(&self, role: LlmRole) -> usize {
        self.queues.lock().get(&role).map_or(0, VecDeque::len)
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn chat(&self, role: LlmRole, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.lock().push(RecordedCall { role, request: request.clone() });
        match self.queues.lock().get_mut(&role).and_then(VecDeque::pop_front) {
            Some(ScriptStep::Respond(text)) => Ok(text),
            Some(ScriptStep::Fail(err)) => Err(err),
            None => Err(BackendError::ScriptExhausted),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("no JSON object found in model output")]
    NoObject,
    #[error("malformed JSON in model output: {0}")]
    Malformed(String),
}

/// Extracts the first balanced `{...}` region of model output, after
/// stripping code fences, and parses it.
pub fn parse_json_payload(text: &str) -> Result<serde_json::Value, PayloadError> {
    let cleaned = text.replace("```json", "").replace("```JSON", "").replace("```", "");
    let start = cleaned.find('{').ok_or(PayloadError::NoObject)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut end = None;
    for (i, c) in cleaned[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    end = Some(start + i + 1);
                    break;
                }
            }
            _ => {}
        }
    }
    let end = end.ok_or_else(|| PayloadError::Malformed("unbalanced braces".into()))?;
    serde_json::from_str(&cleaned[start..end]).map_err(|e| PayloadError::Malformed(e.to_string()))
}

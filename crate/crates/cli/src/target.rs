use chronomem::ingestion::IngestReport;
use chronomem::{AnswerBundle, Engine, Timestamp};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use crate::error::CliError;

/// Where commands send their work: an engine in this process or a server.
pub enum Target {
    Local(Box<Engine>),
    Remote(Client),
}

impl Target {
    pub fn ensure_session(&self, session_id: &str, ts: Timestamp) -> Result<(), CliError> {
        match self {
            Self::Local(engine) => {
                engine.ensure_session(session_id, ts);
                Ok(())
            }
            Self::Remote(client) => {
                client.post::<Value>("/v1/sessions", json!({"session_id": session_id, "ts": ts}))?;
                Ok(())
            }
        }
    }

    pub fn answer(&self, session_id: &str, text: &str, ts: Timestamp) -> Result<AnswerBundle, CliError> {
        match self {
            Self::Local(engine) => Ok(engine.answer(session_id, text, ts)?),
            Self::Remote(client) => {
                client.post(&format!("/v1/sessions/{session_id}/messages"), json!({"text": text, "ts": ts}))
            }
        }
    }

    pub fn ingest(&self, name: &str, text: &str, ts: Timestamp) -> Result<IngestReport, CliError> {
        match self {
            Self::Local(engine) => Ok(engine.ingest_document(name, text, ts)?),
            Self::Remote(client) => client.post("/v1/ingest", json!({"name": name, "text": text, "ts": ts})),
        }
    }

    /// Seals a file-backed local log so `replay --verify` can check it.
    pub fn finish(&self) -> Result<(), CliError> {
        if let Self::Local(engine) = self {
            if engine.config().log_path.is_some() {
                engine.seal_log()?;
            }
        }
        Ok(())
    }
}

pub struct Client {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    pub fn new(base: &str, token: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self { base: base.trim_end_matches('/').to_owned(), token, agent }
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: Value) -> Result<T, CliError> {
        let mut request = self.agent.post(format!("{}{path}", self.base));
        if let Some(token) = &self.token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = request.send_json(&body).map_err(|e| CliError::Remote(e.to_string()))?;
        let status = response.status();
        let value: Value = response.body_mut().read_json().map_err(|e| CliError::Remote(e.to_string()))?;
        if !status.is_success() {
            let kind = value.get("error").and_then(Value::as_str).unwrap_or("error");
            let message = value.get("message").and_then(Value::as_str).unwrap_or_default();
            return Err(CliError::Remote(format!("{} {kind}: {message}", status.as_u16())));
        }
        serde_json::from_value(value).map_err(|e| CliError::Remote(format!("unexpected response: {e}")))
    }
}

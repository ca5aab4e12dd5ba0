//! Minimal blocking JSON-over-HTTP transport shared by the chat backend and the Telegram adapter.

use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct JsonReply {
    pub status: u16,
    /// Parsed body, or `Value::Null` when the body is not JSON.
    pub body: Value,
    pub raw: String,
}

impl JsonReply {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
}

pub trait JsonTransport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration)
        -> Result<JsonReply, TransportError>;
}

/// `ureq`-backed transport. HTTP error statuses come back as replies, not errors.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Self { agent: ureq::Agent::new_with_config(config) }
    }
}

impl JsonTransport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(String, String)], body: &Value, timeout: Duration)
        -> Result<JsonReply, TransportError> {
        let mut req = self.agent.post(url).config().timeout_global(Some(timeout)).build();
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let mut resp = req.send_json(body).map_err(map_error)?;
        let status = resp.status().as_u16();
        let raw = resp.body_mut().read_to_string().map_err(map_error)?;
        let body = serde_json::from_str(&raw).unwrap_or(Value::Null);
        Ok(JsonReply { status, body, raw })
    }
}

fn map_error(e: ureq::Error) -> TransportError {
    match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => TransportError::Timeout,
        other => TransportError::Connect(other.to_string()),
    }
}

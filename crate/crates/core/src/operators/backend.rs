//! Operator backends: the completion providers behind init, crossover and mutation.

use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::config::BackendSettings;
use crate::domain::Section;
use crate::http::{JsonTransport, TransportError, UreqTransport};

/// Which operator a completion realizes. Backends that only speak text
/// ignore it; the mock backend answers from it directly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OperatorTask {
    Init,
    Crossover { a: Vec<Section>, b: Vec<Section> },
    Mutation { parent: Vec<Section>, focus: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_length: u32,
    pub temperature: f64,
    pub attempt: u32,
    /// Per-call nonce drawn from the engine rng.
    pub seed: u64,
    pub task: OperatorTask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Transport attempts used, 1-based.
    pub attempts: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend failed after {attempts} attempt(s): {reason}")]
    Failure { attempts: u32, reason: String },
    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend authentication failed: {0}")]
    Auth(String),
}

pub trait OperatorBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError>;
}

impl<T: OperatorBackend + ?Sized> OperatorBackend for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `i` is `backoff[min(i, len - 1)]`; empty means no delay.
    pub backoff: Vec<Duration>,
}

impl RetryPolicy {
    pub fn delay_before_retry(&self, retry_index: usize) -> Duration {
        match self.backoff.len() {
            0 => Duration::ZERO,
            n => self.backoff[retry_index.min(n - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendProfile {
    pub name: String,
    pub base_url: String,
    pub model: String,
    pub api_key_env: String,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl BackendProfile {
    pub fn from_settings(s: &BackendSettings) -> Self {
        Self {
            name: s.name.clone(),
            base_url: s.base_url.clone(),
            model: s.model.clone(),
            api_key_env: s.api_key_env.clone(),
            retry: RetryPolicy {
                max_attempts: s.max_attempts.max(1),
                backoff: s.backoff_ms.iter().map(|ms| Duration::from_millis(*ms)).collect(),
            },
            timeout: Duration::from_secs(s.timeout_secs.max(1)),
        }
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

type Lookup = dyn Fn(&str) -> Option<String> + Send + Sync;
type Sleeper = dyn Fn(Duration) + Send + Sync;

/// Chat-completion backend (OpenAI-compatible wire shape) with retry and backoff.
pub struct ChatBackend {
    profile: BackendProfile,
    transport: Arc<dyn JsonTransport>,
    credentials: Box<Lookup>,
    sleep: Box<Sleeper>,
}

enum AttemptError {
    Transient(String),
    Timeout,
    Fatal(BackendError),
}

impl ChatBackend {
    pub fn new(profile: BackendProfile) -> Self {
        Self::with_transport(profile, Arc::new(UreqTransport::default()))
    }

    pub fn with_transport(profile: BackendProfile, transport: Arc<dyn JsonTransport>) -> Self {
        Self {
            profile,
            transport,
            credentials: Box::new(|name| std::env::var(name).ok().filter(|v| !v.is_empty())),
            sleep: Box::new(std::thread::sleep),
        }
    }

    pub fn credentials(mut self, lookup: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        self.credentials = Box::new(lookup);
        self
    }

    pub fn sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn request_body(&self, request: &CompletionRequest) -> Value {
        json!({
            "model": self.profile.model,
            "messages": [{ "role": "user", "content": request.prompt }],
            "temperature": request.temperature,
            "max_tokens": request.max_length,
            "seed": request.seed,
        })
    }

    fn attempt(&self, url: &str, headers: &[(String, String)], body: &Value) -> Result<String, AttemptError> {
        let reply = match self.transport.post_json(url, headers, body, self.profile.timeout) {
            Ok(r) => r,
            Err(TransportError::Timeout) => return Err(AttemptError::Timeout),
            Err(TransportError::Connect(m)) => return Err(AttemptError::Transient(m)),
        };
        match reply.status {
            200..=299 => reply.body["choices"][0]["message"]["content"]
                .as_str()
                .map(str::to_string)
                .ok_or_else(|| AttemptError::Fatal(BackendError::Failure { attempts: 0, reason: "reply has no message content".into() })),
            401 | 403 => Err(AttemptError::Fatal(BackendError::Auth(format!("status {}", reply.status)))),
            408 | 409 | 425 | 429 | 500..=599 => Err(AttemptError::Transient(format!("status {}", reply.status))),
            status => Err(AttemptError::Fatal(BackendError::Failure {
                attempts: 0,
                reason: format!("status {status}: {}", reply.raw.chars().take(200).collect::<String>()),
            })),
        }
    }
}

impl OperatorBackend for ChatBackend {
    fn name(&self) -> &str {
        &self.profile.name
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        let key = (self.credentials)(&self.profile.api_key_env)
            .ok_or_else(|| BackendError::Auth(format!("environment variable {} is not set", self.profile.api_key_env)))?;
        let headers = vec![("Authorization".to_string(), format!("Bearer {key}"))];
        let url = self.profile.endpoint();
        let body = self.request_body(request);
        let max = self.profile.retry.max_attempts.max(1);
        let mut last = AttemptError::Transient("no attempt made".into());
        for attempt in 1..=max {
            if attempt > 1 {
                (self.sleep)(self.profile.retry.delay_before_retry(attempt as usize - 2));
            }
            match self.attempt(&url, &headers, &body) {
                Ok(text) => return Ok(Completion { text, attempts: attempt }),
                Err(AttemptError::Fatal(BackendError::Failure { reason, .. })) => {
                    return Err(BackendError::Failure { attempts: attempt, reason })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(e) => {
                    log::warn!("backend {} attempt {attempt}/{max} failed", self.profile.name);
                    last = e;
                }
            }
        }
        Err(match last {
            AttemptError::Timeout => BackendError::Timeout { attempts: max },
            AttemptError::Transient(reason) => BackendError::Failure { attempts: max, reason },
            AttemptError::Fatal(e) => e,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::JsonReply;
    use std::sync::Mutex;

    /// Replays scripted replies and counts calls.
    struct Scripted {
        replies: Mutex<Vec<Result<JsonReply, TransportError>>>,
        calls: Mutex<Vec<Value>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<JsonReply, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self { replies: Mutex::new(replies), calls: Mutex::new(Vec::new()) })
        }
        fn calls(&self) -> usize {
            self.calls.lock().unwrap().len()
        }
    }

    impl JsonTransport for Scripted {
        fn post_json(&self, _url: &str, _h: &[(String, String)], body: &Value, _t: Duration) -> Result<JsonReply, TransportError> {
            self.calls.lock().unwrap().push(body.clone());
            self.replies.lock().unwrap().pop().unwrap_or(Err(TransportError::Connect("script exhausted".into())))
        }
    }

    fn status(code: u16) -> Result<JsonReply, TransportError> {
        Ok(JsonReply { status: code, body: Value::Null, raw: String::new() })
    }

    fn ok(text: &str) -> Result<JsonReply, TransportError> {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": text}}]});
        Ok(JsonReply { status: 200, raw: body.to_string(), body })
    }

    fn profile(max_attempts: u32) -> BackendProfile {
        BackendProfile::from_settings(&BackendSettings { max_attempts, backoff_ms: vec![0], ..Default::default() })
    }

    fn request() -> CompletionRequest {
        CompletionRequest { prompt: "p".into(), max_length: 10, temperature: 1.0, attempt: 1, seed: 1, task: OperatorTask::Init }
    }

    fn backend(t: Arc<Scripted>, max: u32) -> ChatBackend {
        ChatBackend::with_transport(profile(max), t).credentials(|_| Some("k".into())).sleeper(|_| {})
    }

    #[test]
    fn two_transient_failures_then_success() {
        let t = Scripted::new(vec![status(503), status(500), ok("answer")]);
        let got = backend(t.clone(), 3).complete(&request()).unwrap();
        assert_eq!(got, Completion { text: "answer".into(), attempts: 3 });
        assert_eq!(t.calls(), 3);
    }

    #[test]
    fn never_exceeds_max_attempts() {
        for max in 1..=5 {
            let t = Scripted::new(vec![status(502); 10]);
            let err = backend(t.clone(), max).complete(&request()).unwrap_err();
            assert_eq!(t.calls(), max as usize);
            assert!(matches!(err, BackendError::Failure { attempts, .. } if attempts == max));
        }
        let t = Scripted::new(vec![Err(TransportError::Timeout); 4]);
        assert_eq!(backend(t, 2).complete(&request()).unwrap_err(), BackendError::Timeout { attempts: 2 });
    }

    #[test]
    fn missing_credential_fails_before_network() {
        let t = Scripted::new(vec![ok("x")]);
        let b = ChatBackend::with_transport(profile(3), t.clone()).credentials(|_| None);
        assert!(matches!(b.complete(&request()), Err(BackendError::Auth(_))));
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn auth_and_client_errors_are_not_retried() {
        let t = Scripted::new(vec![status(401), ok("x")]);
        assert!(matches!(backend(t.clone(), 3).complete(&request()), Err(BackendError::Auth(_))));
        assert_eq!(t.calls(), 1);
        let t = Scripted::new(vec![status(400), ok("x")]);
        assert!(matches!(backend(t.clone(), 3).complete(&request()), Err(BackendError::Failure { attempts: 1, .. })));
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn wire_shape() {
        let t = Scripted::new(vec![ok("x")]);
        backend(t.clone(), 1).complete(&request()).unwrap();
        let body = &t.calls.lock().unwrap()[0];
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "p");
        assert_eq!(body["max_tokens"], 10);
    }

    #[test]
    fn backoff_schedule_clamps_to_last() {
        let p = RetryPolicy { max_attempts: 5, backoff: vec![Duration::from_millis(1), Duration::from_millis(5)] };
        assert_eq!(p.delay_before_retry(0), Duration::from_millis(1));
        assert_eq!(p.delay_before_retry(7), Duration::from_millis(5));
        assert_eq!(RetryPolicy { max_attempts: 1, backoff: vec![] }.delay_before_retry(3), Duration::ZERO);
    }
}

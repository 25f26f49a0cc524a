//! Chat-completion gateway with three interchangeable backends: a live
//! HTTP endpoint, scripted replay keyed by request hash, and a synthetic
//! oracle for experiments.

pub mod json;
pub mod live;
pub mod oracle;
pub mod scripted;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use json::{extract_json, FieldSpec, JsonSchema, MalformedOutput, StructuredRecord};
pub use live::{LiveBackend, LiveBackendConfig};
pub use oracle::{OracleBackend, OracleWorld, SampleDifficulty, WorldParams};
pub use scripted::{RecordingBackend, ScriptEntry, ScriptedBackend};

use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

#[derive(Serialize)]
struct CanonicalRequest<'a> {
    messages: &'a [Message],
    temperature: f64,
    seed: Option<u64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("at least one user message is required".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 over messages, temperature and seed. `model` and
    /// `max_tokens` are excluded so scripts survive budget tuning.
    pub fn canonical_hash(&self) -> String {
        let canon = CanonicalRequest {
            messages: &self.messages,
            temperature: self.temperature,
            seed: self.seed,
        };
        let bytes = serde_json::to_vec(&canon).expect("request serialises");
        sha256_hex(&bytes)
    }

    pub fn system_prompt(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map_or("", |m| m.content.as_str())
    }

    /// All user content joined with newlines.
    pub fn user_prompt(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("unscripted request {hash}")]
    Unscripted { hash: String },
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("empty completion")]
    EmptyContent,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(req)
    }
}

/// Counting semaphore bounding concurrent in-flight calls.
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightPermit<'_> {
        let mut n = self.available.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        InFlightPermit { sem: self }
    }
}

struct InFlightPermit<'a> {
    sem: &'a InFlight,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.sem.available.lock().expect("semaphore poisoned") += 1;
        self.sem.freed.notify_one();
    }
}

/// The handle agents use. Validates requests, enforces the in-flight cap,
/// and rejects empty completions.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    in_flight: Arc<InFlight>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, max_in_flight: usize) -> Self {
        Self {
            backend,
            in_flight: Arc::new(InFlight {
                available: Mutex::new(max_in_flight.max(1)),
                freed: Condvar::new(),
            }),
            model: "default".into(),
            temperature: 0.7,
            max_tokens: 1024,
        }
    }

    pub fn with_settings(mut self, model: &str, temperature: f64, max_tokens: u32) -> Self {
        self.model = model.to_string();
        self.temperature = temperature;
        self.max_tokens = max_tokens;
        self
    }

    pub fn request(&self, system: &str, user: &str, seed: u64) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages: vec![Message::system(system), Message::user(user)],
            temperature: self.temperature,
            seed: Some(seed),
            max_tokens: self.max_tokens,
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let _permit = self.in_flight.acquire();
        let started = Instant::now();
        let mut resp = self.backend.complete(req)?;
        if resp.content.trim().is_empty() {
            return Err(GatewayError::EmptyContent);
        }
        if resp.latency_ms == 0 {
            resp.latency_ms = started.elapsed().as_millis() as u64;
        }
        Ok(resp)
    }
}

/// Records every request it forwards. Used to audit constructed prompts.
pub struct AuditingBackend<B> {
    inner: B,
    log: Mutex<Vec<ChatRequest>>,
}

impl<B: ChatBackend> AuditingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("audit log poisoned").clone()
    }
}

impl<B: ChatBackend> ChatBackend for AuditingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.log.lock().expect("audit log poisoned").push(req.clone());
        self.inner.complete(req)
    }
}

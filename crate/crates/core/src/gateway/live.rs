//! Chat-completion-compatible HTTP backend.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError};

#[derive(Debug, Clone)]
pub struct LiveBackendConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Retries after the first attempt, on timeout or 5xx only.
    pub max_retries: u32,
    /// Delay before the first retry; doubles after each.
    pub initial_backoff: Duration,
}

impl Default for LiveBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

pub struct LiveBackend {
    config: LiveBackendConfig,
    client: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveBackendConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let mut call = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(GatewayError::HttpStatus {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        let parsed: CompletionBody =
            serde_json::from_str(&text).map_err(|e| GatewayError::MalformedBody(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| GatewayError::MalformedBody("missing choices[0].message.content".into()))
    }
}

fn classify(err: reqwest::Error) -> GatewayError {
    if err.is_timeout() {
        GatewayError::Timeout
    } else {
        GatewayError::Transport(err.to_string())
    }
}

fn retryable(err: &GatewayError) -> bool {
    match err {
        GatewayError::Timeout => true,
        GatewayError::HttpStatus { status, .. } => *status >= 500,
        _ => false,
    }
}

impl ChatBackend for LiveBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let started = Instant::now();
        let mut backoff = self.config.initial_backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(req) {
                Ok(content) => {
                    return Ok(ChatResponse {
                        content,
                        backend: BackendKind::Live,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(err) if retryable(&err) && attempt < self.config.max_retries => {
                    tracing::warn!("chat request failed ({err}); retrying in {backoff:?}");
                    std::thread::sleep(backoff);
                    backoff *= 2;
                    attempt += 1;
                }
                Err(err) => return Err(err),
            }
        }
    }
}

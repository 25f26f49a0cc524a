//! Replay of recorded completions keyed by canonical request hash.
//! Script files are JSONL of `{"request_hash": ..., "response_text": ...}`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError};
use crate::tsv::{read_jsonl, write_jsonl, TableError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub request_hash: String,
    pub response_text: String,
}

#[derive(Debug, Default)]
pub struct ScriptedBackend {
    responses: HashMap<String, String>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Self {
        Self {
            responses: entries
                .into_iter()
                .map(|e| (e.request_hash, e.response_text))
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Ok(Self::new(read_jsonl::<ScriptEntry>(path)?))
    }

    pub fn insert(&mut self, req: &ChatRequest, response: impl Into<String>) {
        self.responses.insert(req.canonical_hash(), response.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let hash = req.canonical_hash();
        match self.responses.get(&hash) {
            Some(text) => Ok(ChatResponse {
                content: text.clone(),
                backend: BackendKind::Scripted,
                latency_ms: 0,
            }),
            None => Err(GatewayError::Unscripted { hash }),
        }
    }
}

/// Forwards to another backend and keeps every (hash, response) pair so the
/// run can be replayed through [`ScriptedBackend`].
pub struct RecordingBackend<B> {
    inner: B,
    recorded: Mutex<BTreeMap<String, String>>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            recorded: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn entries(&self) -> Vec<ScriptEntry> {
        self.recorded
            .lock()
            .expect("recording poisoned")
            .iter()
            .map(|(h, r)| ScriptEntry {
                request_hash: h.clone(),
                response_text: r.clone(),
            })
            .collect()
    }

    /// Writes the script sorted by hash.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        write_jsonl(path, &self.entries())
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let resp = self.inner.complete(req)?;
        self.recorded
            .lock()
            .expect("recording poisoned")
            .insert(req.canonical_hash(), resp.content.clone());
        Ok(resp)
    }
}

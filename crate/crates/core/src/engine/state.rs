use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EngineError, ReasoningTrace, ScheduledSample};
use crate::types::ContextId;

/// Checkpoint for one context: what is left and what is done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub context: ContextId,
    pub pending: Vec<ScheduledSample>,
    pub completed: Vec<ReasoningTrace>,
    pub rng_seed: u64,
    pub config_hash: String,
}

impl RunState {
    /// A saved state may continue `fresh` only if it was produced under the
    /// same configuration and covers exactly the same samples in the same
    /// order.
    pub fn check_resumable(&self, fresh: &RunState) -> Result<(), EngineError> {
        let refuse = |reason: String| EngineError::ResumeMismatch {
            context: fresh.context.clone(),
            reason,
        };
        if self.config_hash != fresh.config_hash {
            return Err(refuse(format!(
                "config hash {} differs from saved {}",
                fresh.config_hash, self.config_hash
            )));
        }
        if self.context != fresh.context {
            return Err(refuse(format!("state file belongs to {}", self.context)));
        }
        let saved: Vec<&str> = self
            .completed
            .iter()
            .map(|t| t.gene.as_str())
            .chain(self.pending.iter().map(|s| s.query.gene.as_str()))
            .collect();
        let wanted: Vec<&str> = fresh.pending.iter().map(|s| s.query.gene.as_str()).collect();
        if saved != wanted {
            return Err(refuse("saved samples do not match the scheduled samples".into()));
        }
        Ok(())
    }
}

pub fn state_path(dir: &Path, context: &ContextId) -> PathBuf {
    dir.join(format!("{}.json", context.file_key()))
}

/// Writes via a temporary file and rename, so a crash never leaves a
/// truncated checkpoint.
pub fn save_state(dir: &Path, state: &RunState) -> Result<(), EngineError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EngineError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = state_path(dir, &state.context);
    let tmp = path.with_extension("json.tmp");
    let body = serde_json::to_vec_pretty(state).expect("state serialises");
    fs::write(&tmp, body).map_err(io(&tmp))?;
    fs::rename(&tmp, &path).map_err(io(&path))?;
    Ok(())
}

pub fn load_state(path: &Path) -> Result<RunState, EngineError> {
    let text = fs::read_to_string(path).map_err(|source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EngineError::BadState {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

//! Turns the resolved configuration into backends and lookups.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use regcast_core::config::{BackendChoice, RunConfig};
use regcast_core::forge::{BenchmarkItem, Split};
use regcast_core::gateway::{
    ChatBackend, Gateway, LiveBackend, LiveBackendConfig, OracleBackend, OracleWorld, RecordingBackend,
    ScriptedBackend,
};
use regcast_core::knowledge::{
    CachedSource, FallbackSource, KnowledgeBase, LiveConfig, LiveStringSource, MoaTargetMap, SnapshotSource,
};
use regcast_core::tsv::read_jsonl;

use crate::error::{CliError, Kind};

pub type Recorder = Arc<RecordingBackend<Arc<dyn ChatBackend>>>;

pub fn backend_name(choice: BackendChoice) -> &'static str {
    match choice {
        BackendChoice::Live => "live",
        BackendChoice::Scripted => "scripted",
        BackendChoice::Oracle => "oracle",
    }
}

pub fn load_world(path: &Path) -> Result<OracleWorld, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn backend(cfg: &RunConfig) -> Result<Arc<dyn ChatBackend>, CliError> {
    let g = &cfg.gateway;
    match g.backend {
        BackendChoice::Scripted => {
            if g.scripts.is_empty() {
                return Err(CliError::config("the scripted backend needs at least one --script file"));
            }
            let mut entries = Vec::new();
            for path in &g.scripts {
                entries.extend(read_jsonl(path)?);
            }
            Ok(Arc::new(ScriptedBackend::new(entries)))
        }
        BackendChoice::Oracle => {
            let path = g
                .oracle_world
                .as_deref()
                .ok_or_else(|| CliError::config("the oracle backend needs --oracle-world"))?;
            let world = load_world(path)?;
            let oracle = OracleBackend::new(world).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            Ok(Arc::new(oracle))
        }
        BackendChoice::Live => {
            let api_key = std::env::var(&g.api_key_env).ok().filter(|k| !k.is_empty());
            if api_key.is_none() {
                tracing::warn!("{} is not set; sending requests without authorization", g.api_key_env);
            }
            let live = LiveBackend::new(LiveBackendConfig {
                base_url: g.base_url.clone(),
                api_key,
                timeout: Duration::from_secs(g.timeout_secs),
                max_retries: g.max_retries,
                ..Default::default()
            })
            .map_err(|e| CliError::new(Kind::ProviderUnavailable, e.to_string()))?;
            Ok(Arc::new(live))
        }
    }
}

/// Gateway over the configured backend, optionally recording every reply.
pub fn gateway(cfg: &RunConfig, record: bool) -> Result<(Gateway, Option<Recorder>), CliError> {
    let inner = backend(cfg)?;
    let (backend, recorder): (Arc<dyn ChatBackend>, Option<Recorder>) = if record {
        let rec = Arc::new(RecordingBackend::new(inner));
        (rec.clone(), Some(rec))
    } else {
        (inner, None)
    };
    let g = &cfg.gateway;
    let gw = Gateway::new(backend, g.max_in_flight).with_settings(&g.model, g.temperature, g.max_tokens);
    Ok((gw, recorder))
}

pub fn knowledge(cfg: &RunConfig, moa_targets: &Path, interactions: Option<&Path>) -> Result<KnowledgeBase, CliError> {
    let targets = MoaTargetMap::load(moa_targets)?;
    let snapshot = interactions.map(SnapshotSource::load).transpose()?;
    let k = &cfg.knowledge;
    let mut kb = if k.live {
        let live = LiveStringSource::new(LiveConfig {
            base_url: k.api_url.clone(),
            species: k.species,
            ..Default::default()
        })?;
        KnowledgeBase::new(
            targets,
            CachedSource::new(FallbackSource {
                primary: live,
                snapshot,
            }),
        )
    } else {
        KnowledgeBase::new(targets, snapshot.unwrap_or_else(|| SnapshotSource::from_edges([])))
    };
    kb.aggregation = k.aggregation;
    kb.strict = k.strict;
    kb.degrade_unavailable = k.degrade_unavailable;
    Ok(kb)
}

/// Test-split items of a benchmark file.
pub fn test_items(path: &Path) -> Result<Vec<BenchmarkItem>, CliError> {
    let items: Vec<BenchmarkItem> = read_jsonl(path)?;
    Ok(items.into_iter().filter(|i| i.split == Split::Test).collect())
}

pub fn save_recording(recorder: Option<Recorder>, path: &Path) -> Result<bool, CliError> {
    match recorder {
        Some(r) => {
            r.save(path).map_err(crate::error::write_err(path))?;
            Ok(true)
        }
        None => Ok(false),
    }
}

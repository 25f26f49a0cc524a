//! Run configuration read from a TOML file, plus a stable hash of the
//! settings that influence results.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::eval::AggregationMode;
use crate::knowledge::TargetAggregation;
use crate::scheduler::OrderPolicy;
use crate::seed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    Live,
    #[default]
    Scripted,
    Oracle,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "live" => Ok(Self::Live),
            "scripted" => Ok(Self::Scripted),
            "oracle" => Ok(Self::Oracle),
            other => Err(format!("unknown backend {other:?} (live, scripted, oracle)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub backend: BackendChoice,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    /// Replay files for the scripted backend; later files win on clashes.
    pub scripts: Vec<PathBuf>,
    pub oracle_world: Option<PathBuf>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            backend: BackendChoice::Scripted,
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            temperature: 0.7,
            max_tokens: 1024,
            timeout_secs: 120,
            max_retries: 3,
            max_in_flight: 8,
            api_key_env: "REGCAST_API_KEY".into(),
            scripts: Vec::new(),
            oracle_world: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerSettings {
    pub trials: usize,
    pub order: OrderPolicy,
}

impl Default for SchedulerSettings {
    fn default() -> Self {
        Self {
            trials: 5,
            order: OrderPolicy::EasyFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleSettings {
    pub k_samples: usize,
    pub max_retries: usize,
    pub fourth_judge: bool,
    pub expert_retries: usize,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        let d = EnsembleConfig::default();
        Self {
            k_samples: d.k_samples,
            max_retries: d.max_retries,
            fourth_judge: d.fourth_judge,
            expert_retries: d.expert_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSettings {
    pub history_cap: usize,
    pub summary_cap: usize,
    pub include_unverified: bool,
    pub workers: usize,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            history_cap: crate::engine::DEFAULT_HISTORY_CAP,
            summary_cap: crate::engine::DEFAULT_SUMMARY_CAP,
            include_unverified: false,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnowledgeSettings {
    pub aggregation: TargetAggregation,
    pub strict: bool,
    pub degrade_unavailable: bool,
    /// Query the interaction API before the local snapshot.
    pub live: bool,
    pub api_url: String,
    pub species: u32,
}

impl Default for KnowledgeSettings {
    fn default() -> Self {
        Self {
            aggregation: TargetAggregation::Max,
            strict: false,
            degrade_unavailable: false,
            live: false,
            api_url: "https://string-db.org".into(),
            species: 9606,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeSettings {
    pub threshold: f64,
    pub per_direction: usize,
    pub min_consistent: usize,
    pub test_fraction: f64,
}

impl Default for ForgeSettings {
    fn default() -> Self {
        Self {
            threshold: crate::forge::DEFAULT_CONSISTENCY_THRESHOLD,
            per_direction: 10,
            min_consistent: 40,
            test_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub mode: AggregationMode,
    pub accepted_only: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: AggregationMode::Pooled,
            accepted_only: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every derived seed.
    pub seed: u64,
    pub gateway: GatewaySettings,
    pub scheduler: SchedulerSettings,
    pub ensemble: EnsembleSettings,
    pub engine: EngineSettings,
    pub knowledge: KnowledgeSettings,
    pub forge: ForgeSettings,
    pub eval: EvalSettings,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.scheduler.trials == 0 {
            return bad("scheduler.trials must be at least 1");
        }
        if self.ensemble.k_samples == 0 {
            return bad("ensemble.k_samples must be at least 1");
        }
        if !(self.gateway.temperature >= 0.0 && self.gateway.temperature.is_finite()) {
            return bad("gateway.temperature must be finite and >= 0");
        }
        if self.gateway.max_tokens == 0 {
            return bad("gateway.max_tokens must be positive");
        }
        if !(0.0..=1.0).contains(&self.forge.threshold) {
            return bad("forge.threshold must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.forge.test_fraction) {
            return bad("forge.test_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            k_samples: self.ensemble.k_samples,
            max_retries: self.ensemble.max_retries,
            fourth_judge: self.ensemble.fourth_judge,
            expert_retries: self.ensemble.expert_retries,
            root_seed: self.seed,
        }
    }

    /// Hash of everything that can change outputs. Worker counts, the
    /// in-flight cap, timeouts, file paths and the key variable are left
    /// out.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.engine.workers = 0;
        c.gateway.max_in_flight = 0;
        c.gateway.timeout_secs = 0;
        c.gateway.api_key_env = String::new();
        c.gateway.scripts = Vec::new();
        c.gateway.oracle_world = None;
        c.eval = EvalSettings::default();
        let json = serde_json::to_vec(&c).expect("config serialises");
        sha256_hex(&json)[..16].to_string()
    }
}

//! Versioned prompt assets and `{placeholder}` filling.

use std::collections::BTreeMap;

/// Bumped whenever any asset text changes; recorded in run manifests.
pub const PROMPT_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template {template}: no value for placeholder {{{name}}}")]
    MissingValue { template: &'static str, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

impl Template {
    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    let name = &after[..close];
                    if !out.contains(&name) {
                        out.push(name);
                    }
                    rest = &after[close + 1..];
                }
                _ => rest = after,
            }
        }
        out
    }

    /// Substitutes every `{name}`. Braces that do not enclose an identifier
    /// are copied through; substituted values are never re-scanned.
    pub fn fill(&self, values: &BTreeMap<&str, String>) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_ident(&after[..close]) => {
                    let name = &after[..close];
                    let value = values.get(name).ok_or_else(|| PromptError::MissingValue {
                        template: self.name,
                        name: name.to_string(),
                    })?;
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                _ => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

macro_rules! asset {
    ($name:literal) => {
        Template {
            name: $name,
            text: include_str!(concat!("../prompts/", $name, ".txt")),
        }
    };
}

pub const CONTEXT_SYSTEM: Template = asset!("context.system");
pub const CONTEXT_USER: Template = asset!("context.user");
pub const MECHANISM_SYSTEM: Template = asset!("mechanism.system");
pub const MECHANISM_USER: Template = asset!("mechanism.user");
pub const NETWORK_SYSTEM: Template = asset!("network.system");
pub const NETWORK_USER: Template = asset!("network.user");
pub const INTEGRATION_SYSTEM: Template = asset!("integration.system");
pub const INTEGRATION_PRIOR_SYSTEM: Template = asset!("integration_prior.system");
pub const INTEGRATION_USER: Template = asset!("integration.user");
pub const JUDGE_HISTORY_SYSTEM: Template = asset!("judge_history.system");
pub const JUDGE_HISTORY_USER: Template = asset!("judge_history.user");
pub const JUDGE_GROUNDING_SYSTEM: Template = asset!("judge_grounding.system");
pub const JUDGE_GROUNDING_USER: Template = asset!("judge_grounding.user");
pub const JUDGE_CONSISTENCY_SYSTEM: Template = asset!("judge_consistency.system");
pub const JUDGE_CONSISTENCY_USER: Template = asset!("judge_consistency.user");
pub const PROBE_SYSTEM: Template = asset!("probe.system");
pub const PROBE_USER: Template = asset!("probe.user");

/// Which agent a system prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentRole {
    Context,
    Mechanism,
    Network,
    Integration,
    HistoryJudge,
    GroundingJudge,
    ConsistencyJudge,
    Probe,
}

impl AgentRole {
    pub fn identify(system_prompt: &str) -> Option<Self> {
        let first = system_prompt.lines().next().unwrap_or_default();
        let table = [
            (CONTEXT_SYSTEM, AgentRole::Context),
            (MECHANISM_SYSTEM, AgentRole::Mechanism),
            (NETWORK_SYSTEM, AgentRole::Network),
            (INTEGRATION_SYSTEM, AgentRole::Integration),
            (JUDGE_HISTORY_SYSTEM, AgentRole::HistoryJudge),
            (JUDGE_GROUNDING_SYSTEM, AgentRole::GroundingJudge),
            (JUDGE_CONSISTENCY_SYSTEM, AgentRole::ConsistencyJudge),
            (PROBE_SYSTEM, AgentRole::Probe),
        ];
        table
            .iter()
            .find(|(t, _)| t.text.lines().next() == Some(first))
            .map(|(_, role)| *role)
    }

    pub fn is_judge(self) -> bool {
        matches!(
            self,
            AgentRole::HistoryJudge | AgentRole::GroundingJudge | AgentRole::ConsistencyJudge
        )
    }
}

//! Expert agents, the integration agent and the judge gate.
//!
//! Every prompt-building function takes a [`Query`], which has no label
//! field, so ground truth cannot reach a prompt through this module.

mod agents;
mod gate;
mod prior;

use serde::{Deserialize, Serialize};

pub use agents::{
    history_block, history_summary, integrate, integration_prompt, judge, run_experts, ExpertFailure, ExpertKind,
    ExpertOutput, ExpertPanel, IntegrationOutput, JudgeKind, JudgeVerdict, Verdict,
};
pub use gate::{
    judge_gate, predict_score, run_gate, vote_share, AttemptRecord, GateOutcome, Prediction,
};
pub use prior::{NeuralPrior, PriorSource, TablePrior};

use crate::gateway::GatewayError;
use crate::knowledge::KnowledgeError;
use crate::prompts::PromptError;
use crate::seed::derive_seed;
use crate::types::Query;

#[derive(Debug, thiserror::Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("no expert produced usable output")]
    NoExperts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Independent integrate-and-verify chains per sample.
    pub k_samples: usize,
    /// Regenerations after the first attempt.
    pub max_retries: usize,
    /// Second logical consistency judge with its own seed.
    pub fourth_judge: bool,
    /// Re-asks of an expert whose reply fails schema validation.
    pub expert_retries: usize,
    pub root_seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            k_samples: 5,
            max_retries: 3,
            fourth_judge: true,
            expert_retries: 1,
            root_seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn judges(&self) -> Vec<(u8, JudgeKind)> {
        let mut out = vec![(1, JudgeKind::History), (2, JudgeKind::Grounding), (3, JudgeKind::Consistency)];
        if self.fourth_judge {
            out.push((4, JudgeKind::Consistency));
        }
        out
    }
}

pub fn expert_seed(root: u64, q: &Query, kind: ExpertKind, attempt: usize) -> u64 {
    derive_seed(
        root,
        &["expert", &q.cell_line, &q.compound, &q.gene, kind.as_str(), &attempt.to_string()],
    )
}

pub fn integration_seed(root: u64, q: &Query, vote: usize, attempt: usize) -> u64 {
    derive_seed(
        root,
        &["integrate", &q.cell_line, &q.compound, &q.gene, &vote.to_string(), &attempt.to_string()],
    )
}

pub fn judge_seed(root: u64, q: &Query, vote: usize, attempt: usize, judge_id: u8) -> u64 {
    derive_seed(
        root,
        &[
            "judge",
            &q.cell_line,
            &q.compound,
            &q.gene,
            &vote.to_string(),
            &attempt.to_string(),
            &judge_id.to_string(),
        ],
    )
}

pub(crate) fn check_query(q: &Query) -> Result<(), EnsembleError> {
    for (name, v) in [("cell_line", &q.cell_line), ("compound", &q.compound), ("gene", &q.gene)] {
        if v.trim().is_empty() {
            return Err(EnsembleError::InvalidSample(format!("{name} is empty")));
        }
    }
    Ok(())
}

/// Everything a prediction needs besides the sample and its history.
#[derive(Clone)]
pub struct Ensemble {
    pub gateway: crate::gateway::Gateway,
    pub knowledge: std::sync::Arc<crate::knowledge::KnowledgeBase>,
    pub prior: Option<std::sync::Arc<dyn PriorSource>>,
    pub config: EnsembleConfig,
}

impl Ensemble {
    /// The MoA's annotated targets, as given to the network expert.
    pub fn pert_target(&self, q: &Query) -> String {
        match self.knowledge.targets.get(&q.moa) {
            Some(t) if !t.is_empty() => t.join(", "),
            _ => "unknown".to_string(),
        }
    }
}

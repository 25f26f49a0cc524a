//! Per-context easy-to-hard loop with curated history and resumable state.

mod state;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use state::{load_state, save_state, state_path, RunState};

use crate::ensemble::{
    predict_score, Ensemble, EnsembleError, ExpertFailure, ExpertOutput, IntegrationOutput, JudgeVerdict,
    NeuralPrior, Prediction,
};
use crate::eval::PredictionRecord;
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::tsv::write_jsonl;
use crate::types::{ContextId, Direction, Query};

pub const DEFAULT_SUMMARY_CAP: usize = 600;
pub const DEFAULT_HISTORY_CAP: usize = 5;

/// A prior prediction offered as context. Holds the predicted direction
/// only; ground truth never enters history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub gene: String,
    pub predicted_label: Direction,
    pub reasoning_summary: String,
    pub composite_score_at_prediction: f64,
    pub verified: bool,
}

/// First `cap` characters of `text`.
pub fn summarize(text: &str, cap: usize) -> String {
    match text.char_indices().nth(cap) {
        Some((i, _)) => text[..i].to_string(),
        None => text.to_string(),
    }
}

/// Up to `cap` eligible entries ranked by relatedness of their gene to
/// `current_gene`, newer first among equals.
pub fn curate_history(
    entries: &[HistoryEntry],
    current_gene: &str,
    cap: usize,
    knowledge: &KnowledgeBase,
    include_unverified: bool,
) -> Result<Vec<HistoryEntry>, KnowledgeError> {
    if cap == 0 {
        return Ok(Vec::new());
    }
    let mut ranked = Vec::new();
    for (i, e) in entries.iter().enumerate() {
        if e.verified || include_unverified {
            ranked.push((knowledge.gene_gene(&e.gene, current_gene)?.score, i));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    Ok(ranked.into_iter().take(cap).map(|(_, i)| entries[i].clone()).collect())
}

/// One sample in processing order. `truth` is carried only so predictions
/// can be scored later; it is never read while building prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledSample {
    pub query: Query,
    pub composite: f64,
    pub truth: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSummary {
    pub answer: Option<Direction>,
    pub verified: bool,
    pub retries: usize,
    pub problematic: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTrace {
    pub cell_line: String,
    pub compound: String,
    pub moa: String,
    pub gene: String,
    pub position: usize,
    pub composite: f64,
    pub history_genes: Vec<String>,
    pub experts: Vec<ExpertOutput>,
    pub expert_failures: Vec<ExpertFailure>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<NeuralPrior>,
    pub integration: Option<IntegrationOutput>,
    pub judges: Vec<JudgeVerdict>,
    pub retries: usize,
    pub verified: bool,
    pub final_answer: Direction,
    pub score: f64,
    pub votes: Vec<VoteSummary>,
}

impl ReasoningTrace {
    pub fn from_prediction(s: &ScheduledSample, position: usize, history: &[HistoryEntry], p: Prediction) -> Self {
        let rep = p.representative_vote();
        let votes = p
            .votes
            .iter()
            .map(|v| VoteSummary {
                answer: v.answer(),
                verified: v.verified,
                retries: v.retries,
                problematic: v.chosen_attempt().map(|a| a.problematic),
            })
            .collect();
        Self {
            cell_line: s.query.cell_line.clone(),
            compound: s.query.compound.clone(),
            moa: s.query.moa.clone(),
            gene: s.query.gene.clone(),
            position,
            composite: s.composite,
            history_genes: history.iter().map(|h| h.gene.clone()).collect(),
            integration: p.representative_output().cloned(),
            judges: rep.and_then(|v| v.chosen_attempt()).map(|a| a.verdicts.clone()).unwrap_or_default(),
            retries: rep.map_or(0, |v| v.retries),
            verified: p.verified,
            final_answer: p.predicted_label,
            score: p.score,
            votes,
            experts: p.panel.outputs.into_values().collect(),
            expert_failures: p.panel.failures,
            prior: p.prior,
        }
    }

    pub fn history_entry(&self, summary_cap: usize) -> HistoryEntry {
        HistoryEntry {
            gene: self.gene.clone(),
            predicted_label: self.final_answer,
            reasoning_summary: self
                .integration
                .as_ref()
                .map_or_else(String::new, |i| summarize(&i.reasoning, summary_cap)),
            composite_score_at_prediction: self.composite,
            verified: self.verified,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: unreadable run state: {message}")]
    BadState { path: PathBuf, message: String },
    #[error("refusing to resume {context}: {reason}")]
    ResumeMismatch { context: ContextId, reason: String },
    #[error("context {context} failed at {gene}: {source}")]
    Sample {
        context: ContextId,
        gene: String,
        #[source]
        source: Box<EngineError>,
    },
    #[error("{} context(s) failed; first: {first}", .count)]
    Contexts { count: usize, first: Box<EngineError> },
}

impl EngineError {
    /// The innermost error, looking through context wrappers.
    pub fn root(&self) -> &EngineError {
        match self {
            EngineError::Sample { source, .. } => source.root(),
            EngineError::Contexts { first, .. } => first.root(),
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub history_cap: usize,
    pub summary_cap: usize,
    /// Offer flagged traces as history too.
    pub include_unverified: bool,
    pub workers: usize,
    /// Stamped into run state; resuming under a different hash is refused.
    pub config_hash: String,
    pub state_dir: Option<PathBuf>,
    pub resume: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            history_cap: DEFAULT_HISTORY_CAP,
            summary_cap: DEFAULT_SUMMARY_CAP,
            include_unverified: false,
            workers: 1,
            config_hash: String::new(),
            state_dir: None,
            resume: false,
        }
    }
}

fn initial_state(
    context: &ContextId,
    samples: Vec<ScheduledSample>,
    ens: &Ensemble,
    cfg: &EngineConfig,
) -> Result<RunState, EngineError> {
    let fresh = RunState {
        context: context.clone(),
        pending: samples,
        completed: Vec::new(),
        rng_seed: ens.config.root_seed,
        config_hash: cfg.config_hash.clone(),
    };
    let Some(dir) = cfg.state_dir.as_deref().filter(|_| cfg.resume) else {
        return Ok(fresh);
    };
    let path = state_path(dir, context);
    if !path.exists() {
        return Ok(fresh);
    }
    let saved = load_state(&path)?;
    saved.check_resumable(&fresh)?;
    Ok(saved)
}

/// Processes one context's samples in the given order. With a state
/// directory, state is written after every sample so an interrupted run
/// can resume without recomputing completed traces.
pub fn run_context(
    context: &ContextId,
    samples: Vec<ScheduledSample>,
    ens: &Ensemble,
    cfg: &EngineConfig,
) -> Result<Vec<ReasoningTrace>, EngineError> {
    let mut state = initial_state(context, samples, ens, cfg)?;
    let mut history: Vec<HistoryEntry> = state
        .completed
        .iter()
        .map(|t| t.history_entry(cfg.summary_cap))
        .collect();
    let save = |state: &RunState| -> Result<(), EngineError> {
        match &cfg.state_dir {
            Some(dir) => save_state(dir, state),
            None => Ok(()),
        }
    };
    save(&state)?;
    while !state.pending.is_empty() {
        let sample = state.pending[0].clone();
        let wrap = |e: EngineError| EngineError::Sample {
            context: context.clone(),
            gene: sample.query.gene.clone(),
            source: Box::new(e),
        };
        let offered = curate_history(
            &history,
            &sample.query.gene,
            cfg.history_cap,
            &ens.knowledge,
            cfg.include_unverified,
        )
        .map_err(|e| wrap(e.into()))?;
        let prediction = predict_score(&sample.query, &offered, ens).map_err(|e| wrap(e.into()))?;
        let trace = ReasoningTrace::from_prediction(&sample, state.completed.len(), &offered, prediction);
        history.push(trace.history_entry(cfg.summary_cap));
        state.pending.remove(0);
        state.completed.push(trace);
        save(&state)?;
    }
    Ok(state.completed)
}

#[derive(Debug, Clone)]
pub struct ContextRun {
    pub context: ContextId,
    pub samples: Vec<ScheduledSample>,
    pub traces: Vec<ReasoningTrace>,
}

/// Runs contexts independently on up to `cfg.workers` threads. Output is
/// in context order whatever the worker count.
pub fn run_all(
    contexts: BTreeMap<ContextId, Vec<ScheduledSample>>,
    ens: &Ensemble,
    cfg: &EngineConfig,
) -> Result<Vec<ContextRun>, EngineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .expect("thread pool");
    let jobs: Vec<_> = contexts.into_iter().collect();
    let results: Vec<Result<ContextRun, EngineError>> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(context, samples)| {
                let traces = run_context(&context, samples.clone(), ens, cfg)?;
                Ok(ContextRun {
                    context,
                    samples,
                    traces,
                })
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => errors.push(e),
        }
    }
    match errors.len() {
        0 => Ok(runs),
        1 => Err(errors.remove(0)),
        count => Err(EngineError::Contexts {
            count,
            first: Box::new(errors.remove(0)),
        }),
    }
}

pub fn prediction_records(runs: &[ContextRun], run_id: u32) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for run in runs {
        let truth: BTreeMap<&str, Direction> = run.samples.iter().map(|s| (s.query.gene.as_str(), s.truth)).collect();
        for t in &run.traces {
            out.push(PredictionRecord {
                cell_line: t.cell_line.clone(),
                compound: t.compound.clone(),
                moa: t.moa.clone(),
                gene: t.gene.clone(),
                score: t.score,
                predicted_label: t.final_answer,
                true_label: truth[t.gene.as_str()],
                verified: t.verified,
                run_id,
                category: None,
            });
        }
    }
    out
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EngineError + '_ {
    move |source| EngineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_traces(path: &Path, runs: &[ContextRun]) -> Result<(), EngineError> {
    let traces: Vec<&ReasoningTrace> = runs.iter().flat_map(|r| &r.traces).collect();
    write_jsonl(path, &traces).map_err(io_err(path))
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), EngineError> {
    write_jsonl(path, records).map_err(io_err(path))
}

/// Fraction of samples whose predicted direction matches the truth.
pub fn accuracy(runs: &[ContextRun]) -> f64 {
    let records = prediction_records(runs, 0);
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.predicted_label == r.true_label).count() as f64 / records.len() as f64
}

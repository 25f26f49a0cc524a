//! Difficulty scoring and easy-first ordering.
//!
//! A sample's composite score is the product of a plain model's
//! self-consistency over repeated single-shot trials and the biological
//! relatedness of the sample's MoA to its gene. Higher composite = easier =
//! processed earlier.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gateway::{extract_json, FieldSpec, Gateway, GatewayError, JsonSchema};
use crate::knowledge::{KnowledgeBase, KnowledgeError};
use crate::prompts::{PROBE_SYSTEM, PROBE_USER};
use crate::seed::derive_seed;
use crate::tsv::{read_jsonl, write_jsonl, TableError};
use crate::types::{ContextId, Direction, Query};

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Knowledge(#[from] KnowledgeError),
    #[error(transparent)]
    Prompt(#[from] crate::prompts::PromptError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Up,
    Down,
    Invalid,
}

impl From<Direction> for Vote {
    fn from(d: Direction) -> Self {
        match d {
            Direction::Up => Vote::Up,
            Direction::Down => Vote::Down,
        }
    }
}

/// max(#up, #down) / #trials. Invalid trials only count in the denominator.
pub fn vote_consistency(votes: &[Vote]) -> f64 {
    if votes.is_empty() {
        return 0.0;
    }
    let up = votes.iter().filter(|v| **v == Vote::Up).count();
    let down = votes.iter().filter(|v| **v == Vote::Down).count();
    up.max(down) as f64 / votes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub query: Query,
    pub consistency: f64,
    pub relatedness: f64,
    pub composite: f64,
    pub trial_votes: Vec<Vote>,
}

impl DifficultyScore {
    pub fn new(query: Query, consistency: f64, relatedness: f64, trial_votes: Vec<Vote>) -> Self {
        Self {
            query,
            consistency,
            relatedness,
            composite: consistency * relatedness,
            trial_votes,
        }
    }
}

pub fn answer_schema() -> JsonSchema {
    JsonSchema::new(vec![FieldSpec::one_of("answer", &["upregulated", "downregulated"])])
}

pub(crate) fn query_values(q: &Query) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        ("cell_line", q.cell_line.clone()),
        ("pert_or_moa", q.perturbation_text()),
        ("target_gene", q.gene.clone()),
        ("drug_name", q.compound.clone()),
    ])
}

/// Asks the probe question `trials` times with distinct derived seeds.
pub fn probe_self_consistency(
    query: &Query,
    trials: usize,
    gateway: &Gateway,
    root_seed: u64,
) -> Result<(f64, Vec<Vote>), SchedulerError> {
    if trials == 0 {
        return Err(SchedulerError::NoTrials);
    }
    let user = PROBE_USER.fill(&query_values(query))?;
    let schema = answer_schema();
    let mut votes = Vec::with_capacity(trials);
    for trial in 0..trials {
        let seed = derive_seed(
            root_seed,
            &["probe", &query.cell_line, &query.compound, &query.gene, &trial.to_string()],
        );
        let resp = gateway.complete(&gateway.request(PROBE_SYSTEM.text, &user, seed))?;
        let vote = extract_json(&resp.content, &schema)
            .ok()
            .and_then(|r| r.expect("answer").parse::<Direction>().ok())
            .map_or(Vote::Invalid, Vote::from);
        votes.push(vote);
    }
    if votes.iter().all(|v| *v == Vote::Invalid) {
        tracing::warn!(
            "all {trials} probe trials unparseable for {} in {}",
            query.gene,
            query.context()
        );
    }
    Ok((vote_consistency(&votes), votes))
}

#[derive(Debug, Clone, Copy)]
pub struct ProbeParams {
    pub trials: usize,
    pub root_seed: u64,
}

impl Default for ProbeParams {
    fn default() -> Self {
        Self { trials: 5, root_seed: 0 }
    }
}

pub fn score(
    query: &Query,
    knowledge: &KnowledgeBase,
    gateway: &Gateway,
    params: ProbeParams,
) -> Result<DifficultyScore, SchedulerError> {
    let (consistency, votes) = probe_self_consistency(query, params.trials, gateway, params.root_seed)?;
    let relatedness = knowledge.relatedness(&query.moa, &query.gene)?.score;
    Ok(DifficultyScore::new(query.clone(), consistency, relatedness, votes))
}

/// Scores a batch; probing may run concurrently, output keeps input order.
pub fn score_all(
    queries: &[Query],
    knowledge: &KnowledgeBase,
    gateway: &Gateway,
    params: ProbeParams,
) -> Result<Vec<DifficultyScore>, SchedulerError> {
    queries
        .par_iter()
        .map(|q| score(q, knowledge, gateway, params))
        .collect()
}

/// Descending composite, ties by gene symbol.
pub fn sort_easy_first(mut scores: Vec<DifficultyScore>) -> Vec<DifficultyScore> {
    scores.sort_by(|a, b| {
        b.composite
            .total_cmp(&a.composite)
            .then_with(|| a.query.gene.cmp(&b.query.gene))
    });
    scores
}

/// Groups by (cell line, compound) and orders each context easy-first.
pub fn schedule_by_context(scores: Vec<DifficultyScore>) -> BTreeMap<ContextId, Vec<DifficultyScore>> {
    let mut groups: BTreeMap<ContextId, Vec<DifficultyScore>> = BTreeMap::new();
    for s in scores {
        groups.entry(s.query.context()).or_default().push(s);
    }
    groups
        .into_iter()
        .map(|(ctx, v)| (ctx, sort_easy_first(v)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    #[default]
    EasyFirst,
    /// Seeded random order, for ablations.
    Shuffled,
}

/// Orders one context's scores under `policy`. The shuffle starts from
/// gene order and draws from a stream keyed by the context, so it does not
/// depend on input order or on other contexts.
pub fn order_context(scores: Vec<DifficultyScore>, policy: OrderPolicy, root_seed: u64) -> Vec<DifficultyScore> {
    match policy {
        OrderPolicy::EasyFirst => sort_easy_first(scores),
        OrderPolicy::Shuffled => {
            let mut scores = scores;
            scores.sort_by(|a, b| a.query.gene.cmp(&b.query.gene));
            let Some(first) = scores.first() else { return scores };
            let seed = derive_seed(root_seed, &["shuffle", &first.query.cell_line, &first.query.compound]);
            scores.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            scores
        }
    }
}

/// One line of `scores.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub cell_line: String,
    pub compound: String,
    pub gene: String,
    pub consistency: f64,
    pub relatedness: f64,
    pub composite: f64,
    pub votes: Vec<Vote>,
}

impl From<&DifficultyScore> for ScoreRecord {
    fn from(s: &DifficultyScore) -> Self {
        Self {
            cell_line: s.query.cell_line.clone(),
            compound: s.query.compound.clone(),
            gene: s.query.gene.clone(),
            consistency: s.consistency,
            relatedness: s.relatedness,
            composite: s.composite,
            votes: s.trial_votes.clone(),
        }
    }
}

pub fn write_scores(path: &Path, scores: &[DifficultyScore]) -> std::io::Result<()> {
    let records: Vec<ScoreRecord> = scores.iter().map(ScoreRecord::from).collect();
    write_jsonl(path, &records)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, TableError> {
    read_jsonl(path)
}

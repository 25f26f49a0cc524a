//! Synthetic answerer with known ground truth, used to exercise the
//! ordering, history and verification machinery without a language model.
//!
//! Every reply is a pure function of the world and the request hash, so
//! results do not depend on call order or concurrency. Integration answers
//! are correct with probability `base_accuracy_{easy,hard}`; a hard sample
//! gains `context_boost` when its prompt carries at least one history entry
//! for one of its anchor genes whose predicted direction is correct.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayError};
use crate::prompts::AgentRole;
use crate::seed::{derive_seed, unit_draw};
use crate::types::{Direction, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleDifficulty {
    Easy,
    #[default]
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    pub query: Query,
    pub truth: Direction,
    #[serde(default)]
    pub difficulty: SampleDifficulty,
    /// Genes in the same context whose correct history lifts this sample.
    #[serde(default)]
    pub anchors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleWorld {
    pub samples: Vec<OracleSample>,
    pub base_accuracy_easy: f64,
    pub base_accuracy_hard: f64,
    pub context_boost: f64,
    #[serde(default)]
    pub judge_flag_rate: f64,
    #[serde(default)]
    pub malformed_rate: f64,
    pub rng_seed: u64,
}

impl OracleWorld {
    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("base_accuracy_easy", self.base_accuracy_easy),
            ("base_accuracy_hard", self.base_accuracy_hard),
            ("context_boost", self.context_boost),
            ("judge_flag_rate", self.judge_flag_rate),
            ("malformed_rate", self.malformed_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Knobs for [`OracleWorld::synthesize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    /// Share of each context, strongest first, marked easy.
    pub easy_fraction: f64,
    pub base_accuracy_easy: f64,
    pub base_accuracy_hard: f64,
    pub context_boost: f64,
    pub judge_flag_rate: f64,
    pub malformed_rate: f64,
    pub rng_seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            easy_fraction: 0.5,
            base_accuracy_easy: 0.9,
            base_accuracy_hard: 0.7,
            context_boost: 0.2,
            judge_flag_rate: 0.1,
            malformed_rate: 0.02,
            rng_seed: 0,
        }
    }
}

impl OracleWorld {
    /// World over labelled queries `(query, truth, strength)`. Within each
    /// context the strongest `easy_fraction` (ties by gene) are easy and
    /// every hard sample is anchored to all easy genes of its context.
    pub fn synthesize(labelled: &[(Query, Direction, f64)], params: &WorldParams) -> Self {
        let mut by_ctx: std::collections::BTreeMap<_, Vec<&(Query, Direction, f64)>> = Default::default();
        for item in labelled {
            by_ctx.entry(item.0.context()).or_default().push(item);
        }
        let mut samples = Vec::with_capacity(labelled.len());
        for (_, mut items) in by_ctx {
            items.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then_with(|| a.0.gene.cmp(&b.0.gene)));
            let n_easy = (params.easy_fraction * items.len() as f64).round() as usize;
            let easy: Vec<String> = items[..n_easy].iter().map(|i| i.0.gene.clone()).collect();
            for (rank, (query, truth, _)) in items.into_iter().enumerate() {
                let is_easy = rank < n_easy;
                samples.push(OracleSample {
                    query: query.clone(),
                    truth: *truth,
                    difficulty: if is_easy { SampleDifficulty::Easy } else { SampleDifficulty::Hard },
                    anchors: if is_easy { Vec::new() } else { easy.clone() },
                });
            }
        }
        Self {
            samples,
            base_accuracy_easy: params.base_accuracy_easy,
            base_accuracy_hard: params.base_accuracy_hard,
            context_boost: params.context_boost,
            judge_flag_rate: params.judge_flag_rate,
            malformed_rate: params.malformed_rate,
            rng_seed: params.rng_seed,
        }
    }
}

/// (cell line, perturbation text, gene) as they appear in prompts.
type PromptKey = (String, String, String);

pub struct OracleBackend {
    world: OracleWorld,
    index: HashMap<PromptKey, usize>,
}

fn question_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^In (?P<cell>.+?), will (?P<gene>\S+) be upregulated or downregulated by (?P<pert>.+)\?$")
            .expect("valid regex")
    })
}

fn history_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^- (?P<gene>\S+): predicted (?P<dir>upregulated|downregulated)").expect("valid regex")
    })
}

impl OracleBackend {
    pub fn new(world: OracleWorld) -> Result<Self, String> {
        world.validate()?;
        let index = world
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    (s.query.cell_line.clone(), s.query.perturbation_text(), s.query.gene.clone()),
                    i,
                )
            })
            .collect();
        Ok(Self { world, index })
    }

    pub fn world(&self) -> &OracleWorld {
        &self.world
    }

    fn draw(&self, req: &ChatRequest, stream: &str) -> f64 {
        unit_draw(derive_seed(self.world.rng_seed, &[stream, &req.canonical_hash()]))
    }

    fn lookup(&self, user: &str) -> Option<&OracleSample> {
        let caps = question_re().captures(user)?;
        let key = (caps["cell"].to_string(), caps["pert"].to_string(), caps["gene"].to_string());
        self.index.get(&key).map(|&i| &self.world.samples[i])
    }

    /// Probability the integration answer is correct for this prompt.
    pub fn accuracy_for(&self, sample: &OracleSample, user_prompt: &str) -> f64 {
        match sample.difficulty {
            SampleDifficulty::Easy => self.world.base_accuracy_easy,
            SampleDifficulty::Hard => {
                let anchors: HashSet<&str> = sample.anchors.iter().map(String::as_str).collect();
                let boosted = history_re().captures_iter(user_prompt).any(|c| {
                    let gene = &c["gene"];
                    if !anchors.contains(gene) {
                        return false;
                    }
                    let key = (
                        sample.query.cell_line.clone(),
                        sample.query.perturbation_text(),
                        gene.to_string(),
                    );
                    let predicted: Direction = c["dir"].parse().expect("regex limits values");
                    self.index
                        .get(&key)
                        .is_some_and(|&i| self.world.samples[i].truth == predicted)
                });
                let base = self.world.base_accuracy_hard;
                if boosted {
                    (base + self.world.context_boost).min(1.0)
                } else {
                    base
                }
            }
        }
    }

    fn answer(&self, req: &ChatRequest, user: &str, with_history: bool) -> (Direction, String) {
        match self.lookup(user) {
            Some(sample) => {
                let p = if with_history {
                    self.accuracy_for(sample, user)
                } else {
                    match sample.difficulty {
                        SampleDifficulty::Easy => self.world.base_accuracy_easy,
                        SampleDifficulty::Hard => self.world.base_accuracy_hard,
                    }
                };
                let dir = if self.draw(req, "answer") < p {
                    sample.truth
                } else {
                    sample.truth.flip()
                };
                (dir, sample.query.gene.clone())
            }
            None => {
                let dir = if self.draw(req, "answer") < 0.5 { Direction::Up } else { Direction::Down };
                (dir, "the target gene".to_string())
            }
        }
    }

    fn reply(&self, req: &ChatRequest) -> String {
        let system = req.system_prompt();
        let user = req.user_prompt();
        let Some(role) = AgentRole::identify(system) else {
            return "I can only answer structured agent prompts.".to_string();
        };
        let malformed = self.world.malformed_rate > 0.0 && self.draw(req, "malformed") < self.world.malformed_rate;
        if malformed && !role.is_judge() {
            return "Let me think about this carefully; the evidence is mixed.".to_string();
        }
        match role {
            AgentRole::Probe => {
                let (dir, _) = self.answer(req, &user, false);
                json!({ "answer": dir.as_answer() }).to_string()
            }
            AgentRole::Context => json!({
                "context_reasoning": "Driver status and basal expression support pathway engagement.",
                "pathway_activity": "active"
            })
            .to_string(),
            AgentRole::Mechanism => json!({
                "mechanism_reasoning": "(Drug)-(inhibits)->(Target kinase)",
                "primary_action": "inhibition"
            })
            .to_string(),
            AgentRole::Network => json!({
                "network_reasoning": "(Target)-(activates)->(Transcription factor)-(regulates)->(Gene)",
                "edge_type": "positive_regulation"
            })
            .to_string(),
            AgentRole::Integration => {
                let (dir, gene) = self.answer(req, &user, true);
                let reasoning = format!(
                    "Pathway evidence converges on {gene} being {} under this perturbation.",
                    dir.as_answer()
                );
                let mut body = json!({ "reasoning": reasoning, "answer": dir.as_answer() });
                if system.contains("counterfactual_reasoning") {
                    body["canonical_reasoning"] = json!(format!("Agent evidence alone suggests {}.", dir.as_answer()));
                    body["counterfactual_reasoning"] = json!("Taking the neural prediction as given leads to the same call.");
                }
                body.to_string()
            }
            AgentRole::HistoryJudge | AgentRole::GroundingJudge | AgentRole::ConsistencyJudge => {
                let flagged = self.draw(req, "judge") < self.world.judge_flag_rate;
                json!({
                    "verdict": if flagged { "problematic" } else { "not-problematic" },
                    "feedback": if flagged { "The justification is too thin." } else { "No issues found." }
                })
                .to_string()
            }
        }
    }
}

impl ChatBackend for OracleBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        Ok(ChatResponse {
            content: self.reply(req),
            backend: BackendKind::Oracle,
            latency_ms: 0,
        })
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_query, expert_seed, EnsembleError, NeuralPrior};
use crate::engine::HistoryEntry;
use crate::gateway::{extract_json, FieldSpec, Gateway, JsonSchema, MalformedOutput};
use crate::prompts::{self, Template};
use crate::scheduler::query_values;
use crate::types::{Direction, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    Context,
    Mechanism,
    Network,
}

impl ExpertKind {
    pub const ALL: [ExpertKind; 3] = [ExpertKind::Context, ExpertKind::Mechanism, ExpertKind::Network];

    pub fn as_str(self) -> &'static str {
        match self {
            ExpertKind::Context => "context",
            ExpertKind::Mechanism => "mechanism",
            ExpertKind::Network => "network",
        }
    }

    fn templates(self) -> (Template, Template) {
        match self {
            ExpertKind::Context => (prompts::CONTEXT_SYSTEM, prompts::CONTEXT_USER),
            ExpertKind::Mechanism => (prompts::MECHANISM_SYSTEM, prompts::MECHANISM_USER),
            ExpertKind::Network => (prompts::NETWORK_SYSTEM, prompts::NETWORK_USER),
        }
    }

    fn reasoning_key(self) -> &'static str {
        match self {
            ExpertKind::Context => "context_reasoning",
            ExpertKind::Mechanism => "mechanism_reasoning",
            ExpertKind::Network => "network_reasoning",
        }
    }

    fn tag_key(self) -> &'static str {
        match self {
            ExpertKind::Context => "pathway_activity",
            ExpertKind::Mechanism => "primary_action",
            ExpertKind::Network => "edge_type",
        }
    }

    pub fn schema(self) -> JsonSchema {
        let tag = match self {
            ExpertKind::Context => FieldSpec::one_of("pathway_activity", &["active", "inactive", "unknown"]),
            // the published domain ends in "etc", so any non-empty action is accepted
            ExpertKind::Mechanism => FieldSpec::required("primary_action"),
            ExpertKind::Network => {
                FieldSpec::one_of("edge_type", &["positive_regulation", "negative_regulation", "complex"])
            }
        };
        JsonSchema::new(vec![FieldSpec::required(self.reasoning_key()), tag])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutput {
    pub kind: ExpertKind,
    pub reasoning: String,
    pub tag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertFailure {
    pub kind: ExpertKind,
    pub reason: String,
}

/// Expert outputs keyed by kind, so arrival order never matters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpertPanel {
    pub outputs: BTreeMap<ExpertKind, ExpertOutput>,
    pub failures: Vec<ExpertFailure>,
}

impl ExpertPanel {
    pub fn from_results(results: impl IntoIterator<Item = Result<ExpertOutput, ExpertFailure>>) -> Self {
        let mut panel = ExpertPanel::default();
        for r in results {
            match r {
                Ok(o) => {
                    panel.outputs.insert(o.kind, o);
                }
                Err(f) => panel.failures.push(f),
            }
        }
        panel.failures.sort_by_key(|f| f.kind);
        panel
    }

    pub fn reasoning(&self, kind: ExpertKind) -> String {
        self.outputs
            .get(&kind)
            .map_or_else(|| format!("no evidence from {} agent", kind.as_str()), |o| o.reasoning.clone())
    }
}

fn expert_values(q: &Query, pert_target: &str) -> BTreeMap<&'static str, String> {
    let mut v = query_values(q);
    v.insert("pert_target", pert_target.to_string());
    v
}

fn run_expert(
    kind: ExpertKind,
    q: &Query,
    pert_target: &str,
    gateway: &Gateway,
    root_seed: u64,
    retries: usize,
) -> Result<Result<ExpertOutput, ExpertFailure>, EnsembleError> {
    let (system, user) = kind.templates();
    let user = user.fill(&expert_values(q, pert_target))?;
    let schema = kind.schema();
    let mut last = String::new();
    for attempt in 0..=retries {
        let req = gateway.request(system.text, &user, expert_seed(root_seed, q, kind, attempt));
        let resp = gateway.complete(&req)?;
        match extract_json(&resp.content, &schema) {
            Ok(rec) => {
                return Ok(Ok(ExpertOutput {
                    kind,
                    reasoning: rec.expect(kind.reasoning_key()).to_string(),
                    tag: rec.expect(kind.tag_key()).to_string(),
                }))
            }
            Err(e) => last = e.reason,
        }
    }
    tracing::warn!("{} expert failed for {} in {}: {last}", kind.as_str(), q.gene, q.context());
    Ok(Err(ExpertFailure { kind, reason: last }))
}

/// Runs the three experts independently. `pert_target` is the knowledge
/// graph's target list for the MoA, used by the network expert.
pub fn run_experts(
    q: &Query,
    pert_target: &str,
    gateway: &Gateway,
    root_seed: u64,
    retries: usize,
) -> Result<ExpertPanel, EnsembleError> {
    check_query(q)?;
    let results: Vec<_> = ExpertKind::ALL
        .par_iter()
        .map(|&k| run_expert(k, q, pert_target, gateway, root_seed, retries))
        .collect::<Result<_, _>>()?;
    Ok(ExpertPanel::from_results(results))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOutput {
    pub reasoning: String,
    pub answer: Direction,
    pub canonical_reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterfactual_reasoning: Option<String>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One line per entry: `- GENE: predicted <direction>; <summary>`.
pub fn history_block(history: &[HistoryEntry]) -> String {
    let mut out = String::new();
    for h in history {
        let _ = writeln!(
            out,
            "- {}: predicted {}; {}",
            h.gene,
            h.predicted_label.as_answer(),
            one_line(&h.reasoning_summary)
        );
    }
    out.trim_end().to_string()
}

pub fn history_summary(history: &[HistoryEntry]) -> String {
    if history.is_empty() {
        "None.".to_string()
    } else {
        history_block(history)
    }
}

/// System and user prompt for one integration attempt.
pub fn integration_prompt(
    q: &Query,
    panel: &ExpertPanel,
    history: &[HistoryEntry],
    prior: Option<&NeuralPrior>,
    feedback: &[JudgeVerdict],
) -> Result<(&'static str, String), EnsembleError> {
    let mut values = query_values(q);
    for kind in ExpertKind::ALL {
        values.insert(kind.reasoning_key(), one_line(&panel.reasoning(kind)));
    }
    let mut user = prompts::INTEGRATION_USER.fill(&values)?;
    if let Some(p) = prior {
        let _ = write!(
            user,
            "\n[Neural Prior] predicted: {}, confidence: {:.3}",
            p.predicted_label.as_answer(),
            p.confidence
        );
    }
    if !history.is_empty() {
        let _ = write!(user, "\n[History]\n{}", history_block(history));
    }
    let flagged: Vec<_> = feedback.iter().filter(|v| v.verdict == Verdict::Problematic).collect();
    if !flagged.is_empty() {
        user.push_str("\n[Judge Feedback]");
        for v in flagged {
            let _ = write!(user, "\n- {}: {}", v.judge.title(), one_line(&v.feedback));
        }
    }
    let system = if prior.is_some() {
        prompts::INTEGRATION_PRIOR_SYSTEM.text
    } else {
        prompts::INTEGRATION_SYSTEM.text
    };
    Ok((system, user))
}

fn integration_schema(with_prior: bool) -> JsonSchema {
    let mut fields = vec![
        FieldSpec::required("reasoning"),
        FieldSpec::one_of("answer", &["upregulated", "downregulated"]),
    ];
    if with_prior {
        fields.push(FieldSpec::required("canonical_reasoning"));
        fields.push(FieldSpec::required("counterfactual_reasoning"));
    }
    JsonSchema::new(fields)
}

/// One integration call. The inner `Err` is a malformed reply, which the
/// judge gate treats as a failed attempt.
#[allow(clippy::too_many_arguments)]
pub fn integrate(
    q: &Query,
    panel: &ExpertPanel,
    history: &[HistoryEntry],
    prior: Option<&NeuralPrior>,
    feedback: &[JudgeVerdict],
    gateway: &Gateway,
    seed: u64,
) -> Result<Result<IntegrationOutput, MalformedOutput>, EnsembleError> {
    if panel.outputs.is_empty() {
        return Err(EnsembleError::NoExperts);
    }
    let (system, user) = integration_prompt(q, panel, history, prior, feedback)?;
    let resp = gateway.complete(&gateway.request(system, &user, seed))?;
    Ok(extract_json(&resp.content, &integration_schema(prior.is_some())).map(|rec| {
        let reasoning = rec.expect("reasoning").to_string();
        IntegrationOutput {
            answer: rec.expect("answer").parse().expect("schema restricts answer"),
            canonical_reasoning: rec.get("canonical_reasoning").unwrap_or(&reasoning).to_string(),
            counterfactual_reasoning: rec.get("counterfactual_reasoning").map(str::to_string),
            reasoning,
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeKind {
    History,
    Grounding,
    Consistency,
}

impl JudgeKind {
    pub fn title(self) -> &'static str {
        match self {
            JudgeKind::History => "History Leakage Inspector",
            JudgeKind::Grounding => "Grounding Consistency Inspector",
            JudgeKind::Consistency => "Logical Consistency Checker",
        }
    }

    fn templates(self) -> (Template, Template) {
        match self {
            JudgeKind::History => (prompts::JUDGE_HISTORY_SYSTEM, prompts::JUDGE_HISTORY_USER),
            JudgeKind::Grounding => (prompts::JUDGE_GROUNDING_SYSTEM, prompts::JUDGE_GROUNDING_USER),
            JudgeKind::Consistency => (prompts::JUDGE_CONSISTENCY_SYSTEM, prompts::JUDGE_CONSISTENCY_USER),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "problematic")]
    Problematic,
    #[serde(rename = "not-problematic")]
    NotProblematic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub judge_id: u8,
    pub judge: JudgeKind,
    pub verdict: Verdict,
    pub feedback: String,
    /// The reply failed validation and was counted as problematic.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub malformed: bool,
}

fn judge_schema() -> JsonSchema {
    JsonSchema::new(vec![
        FieldSpec::one_of("verdict", &["problematic", "not-problematic"]),
        FieldSpec::optional("feedback"),
    ])
}

/// Runs one judge on a candidate. Judges see the history summary, the
/// candidate's reasonings and its answer, plus the sample identifiers.
pub fn judge(
    judge_id: u8,
    kind: JudgeKind,
    q: &Query,
    candidate: &IntegrationOutput,
    history_summary: &str,
    gateway: &Gateway,
    seed: u64,
) -> Result<JudgeVerdict, EnsembleError> {
    let mut values = query_values(q);
    values.insert("history_summary", history_summary.to_string());
    values.insert("canonical_reasoning", candidate.canonical_reasoning.clone());
    values.insert(
        "counterfactual_reasoning",
        candidate.counterfactual_reasoning.clone().unwrap_or_else(|| "N/A".to_string()),
    );
    values.insert("final_reasoning", candidate.reasoning.clone());
    values.insert("final_answer", candidate.answer.as_answer().to_string());
    let (system, user) = kind.templates();
    let user = user.fill(&values)?;
    let resp = gateway.complete(&gateway.request(system.text, &user, seed))?;
    Ok(match extract_json(&resp.content, &judge_schema()) {
        Ok(rec) => JudgeVerdict {
            judge_id,
            judge: kind,
            verdict: if rec.expect("verdict") == "problematic" {
                Verdict::Problematic
            } else {
                Verdict::NotProblematic
            },
            feedback: rec.get("feedback").unwrap_or_default().to_string(),
            malformed: false,
        },
        Err(e) => JudgeVerdict {
            judge_id,
            judge: kind,
            verdict: Verdict::Problematic,
            feedback: e.to_string(),
            malformed: true,
        },
    })
}

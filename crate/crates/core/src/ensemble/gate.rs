use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    history_summary, integrate, integration_seed, judge, judge_seed, run_experts, Ensemble, EnsembleError,
    ExpertPanel, IntegrationOutput, JudgeVerdict, NeuralPrior, Verdict,
};
use crate::engine::HistoryEntry;
use crate::types::{Direction, Query};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: usize,
    pub candidate: Option<IntegrationOutput>,
    /// Why the integration reply was rejected, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub malformed: Option<String>,
    pub verdicts: Vec<JudgeVerdict>,
    /// Number of problematic verdicts. A malformed candidate counts as
    /// flagged by every judge.
    pub problematic: usize,
}

impl AttemptRecord {
    pub fn judged(attempt: usize, candidate: IntegrationOutput, verdicts: Vec<JudgeVerdict>) -> Self {
        let problematic = verdicts.iter().filter(|v| v.verdict == Verdict::Problematic).count();
        Self {
            attempt,
            candidate: Some(candidate),
            malformed: None,
            verdicts,
            problematic,
        }
    }

    pub fn malformed(attempt: usize, reason: String, judges: usize) -> Self {
        Self {
            attempt,
            candidate: None,
            malformed: Some(reason),
            verdicts: Vec::new(),
            problematic: judges,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub attempts: Vec<AttemptRecord>,
    /// Index into `attempts` of the returned candidate.
    pub chosen: Option<usize>,
    pub verified: bool,
    pub retries: usize,
}

impl GateOutcome {
    pub fn candidate(&self) -> Option<&IntegrationOutput> {
        self.chosen.and_then(|i| self.attempts[i].candidate.as_ref())
    }

    pub fn chosen_attempt(&self) -> Option<&AttemptRecord> {
        self.chosen.map(|i| &self.attempts[i])
    }

    pub fn answer(&self) -> Option<Direction> {
        self.candidate().map(|c| c.answer)
    }
}

/// Accept-if-zero loop: up to `1 + max_retries` attempts, stopping at the
/// first candidate with no problematic verdict. When none qualifies, the
/// earliest candidate with the fewest problematic verdicts is returned
/// unverified.
pub fn run_gate<E>(
    max_retries: usize,
    mut attempt: impl FnMut(usize, Option<&AttemptRecord>) -> Result<AttemptRecord, E>,
) -> Result<GateOutcome, E> {
    let mut attempts: Vec<AttemptRecord> = Vec::with_capacity(max_retries + 1);
    for i in 0..=max_retries {
        let rec = attempt(i, attempts.last())?;
        let accepted = rec.candidate.is_some() && rec.problematic == 0;
        attempts.push(rec);
        if accepted {
            return Ok(GateOutcome {
                attempts,
                chosen: Some(i),
                verified: true,
                retries: i,
            });
        }
    }
    let chosen = attempts
        .iter()
        .enumerate()
        .filter(|(_, a)| a.candidate.is_some())
        .min_by_key(|(i, a)| (a.problematic, *i))
        .map(|(i, _)| i);
    Ok(GateOutcome {
        attempts,
        chosen,
        verified: false,
        retries: max_retries,
    })
}

/// Integration plus judges for one vote, regenerating on rejection.
pub fn judge_gate(
    q: &Query,
    panel: &ExpertPanel,
    history: &[HistoryEntry],
    prior: Option<&NeuralPrior>,
    ens: &Ensemble,
    vote: usize,
) -> Result<GateOutcome, EnsembleError> {
    let root = ens.config.root_seed;
    let judges = ens.config.judges();
    let summary = history_summary(history);
    run_gate(ens.config.max_retries, |i, prev| {
        let feedback = prev.map_or(&[][..], |p| p.verdicts.as_slice());
        let seed = integration_seed(root, q, vote, i);
        match integrate(q, panel, history, prior, feedback, &ens.gateway, seed)? {
            Ok(candidate) => {
                let verdicts = judges
                    .par_iter()
                    .map(|&(id, kind)| {
                        judge(id, kind, q, &candidate, &summary, &ens.gateway, judge_seed(root, q, vote, i, id))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(AttemptRecord::judged(i, candidate, verdicts))
            }
            Err(bad) => Ok(AttemptRecord::malformed(i, bad.reason, judges.len())),
        }
    })
}

/// Up-fraction over accepted answers; if no vote was accepted, over the
/// flagged answers instead (then `verified` is false). 0.5 when no vote
/// produced an answer at all.
pub fn vote_share(votes: &[GateOutcome]) -> (f64, bool) {
    let share = |verified: bool| {
        let answers: Vec<Direction> = votes
            .iter()
            .filter(|v| v.verified == verified)
            .filter_map(GateOutcome::answer)
            .collect();
        (!answers.is_empty()).then(|| {
            answers.iter().filter(|a| **a == Direction::Up).count() as f64 / answers.len() as f64
        })
    };
    match share(true) {
        Some(s) => (s, true),
        None => (share(false).unwrap_or(0.5), false),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub panel: ExpertPanel,
    pub prior: Option<NeuralPrior>,
    pub votes: Vec<GateOutcome>,
    pub score: f64,
    pub predicted_label: Direction,
    /// At least one vote passed every judge.
    pub verified: bool,
    /// The first vote agreeing with the predicted label from the pool the
    /// score was computed on.
    pub representative: Option<usize>,
}

impl Prediction {
    pub fn representative_vote(&self) -> Option<&GateOutcome> {
        self.representative.map(|i| &self.votes[i])
    }

    pub fn representative_output(&self) -> Option<&IntegrationOutput> {
        self.representative_vote().and_then(GateOutcome::candidate)
    }
}

/// Experts once, then `k_samples` independent integrate-and-verify chains.
/// The score is the up-fraction of the answers; the label is up iff the
/// score is at least 0.5.
pub fn predict_score(q: &Query, history: &[HistoryEntry], ens: &Ensemble) -> Result<Prediction, EnsembleError> {
    let pert_target = ens.pert_target(q);
    let panel = run_experts(q, &pert_target, &ens.gateway, ens.config.root_seed, ens.config.expert_retries)?;
    let prior = ens.prior.as_ref().and_then(|p| p.prior(q));
    let votes = if panel.outputs.is_empty() {
        tracing::warn!("all experts failed for {} in {}; scoring 0.5", q.gene, q.context());
        Vec::new()
    } else {
        (0..ens.config.k_samples)
            .into_par_iter()
            .map(|vote| judge_gate(q, &panel, history, prior.as_ref(), ens, vote))
            .collect::<Result<Vec<_>, _>>()?
    };
    let (score, verified) = vote_share(&votes);
    let predicted_label = if score >= 0.5 { Direction::Up } else { Direction::Down };
    let representative = votes
        .iter()
        .position(|v| v.verified == verified && v.answer() == Some(predicted_label));
    Ok(Prediction {
        panel,
        prior,
        votes,
        score,
        predicted_label,
        verified,
        representative,
    })
}

//! AUROC, run aggregation, agreement ratios and cell-line specificity.

mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use report::{
    case_study, evaluate, AggregationMode, CategoryMap, CategoryRow, EvalOptions, EvalReport, UNASSIGNED,
};

use crate::types::Direction;

/// One scored sample from a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub cell_line: String,
    pub compound: String,
    pub moa: String,
    pub gene: String,
    pub score: f64,
    pub predicted_label: Direction,
    pub true_label: Direction,
    pub verified: bool,
    pub run_id: u32,
    /// Filled from the category map at evaluation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Up iff score >= 0.5.
pub fn threshold(score: f64) -> Direction {
    if score >= 0.5 {
        Direction::Up
    } else {
        Direction::Down
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("target cell line {0:?} has no ratio")]
    UnknownTarget(String),
    #[error("no ratios given")]
    NoRatios,
    #[error("score {0} is not finite")]
    NonFinite(f64),
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. `None` unless both classes are present.
pub fn auroc(scored: &[(f64, bool)]) -> Result<Option<f64>, EvalError> {
    if let Some(&(s, _)) = scored.iter().find(|(s, _)| !s.is_finite()) {
        return Err(EvalError::NonFinite(s));
    }
    let n_pos = scored.iter().filter(|(_, p)| *p).count() as u64;
    let n_neg = scored.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[a].0.total_cmp(&scored[b].0));
    // doubled midranks keep the arithmetic in integers
    let mut pos_rank_sum2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scored[order[j + 1]].0 == scored[order[i]].0 {
            j += 1;
        }
        let doubled = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            if scored[k].1 {
                pos_rank_sum2 += doubled;
            }
        }
        i = j + 1;
    }
    let u2 = pos_rank_sum2 - n_pos * (n_pos + 1);
    Ok(Some(u2 as f64 / (2 * n_pos * n_neg) as f64))
}

/// Mean and sample standard deviation (n - 1); a single value has std 0.
pub fn aggregate_runs(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((mean, var.sqrt()))
}

pub fn agreement_ratio(records: &[PredictionRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let hits = records.iter().filter(|r| r.predicted_label == r.true_label).count();
    Some(hits as f64 / records.len() as f64)
}

fn target_ratio(ratios: &BTreeMap<String, f64>, target: &str) -> Result<f64, EvalError> {
    if ratios.is_empty() {
        return Err(EvalError::NoRatios);
    }
    ratios
        .get(target)
        .copied()
        .ok_or_else(|| EvalError::UnknownTarget(target.to_string()))
}

/// 1 + number of other cell lines with a strictly greater ratio.
pub fn target_rank(ratios: &BTreeMap<String, f64>, target: &str) -> Result<usize, EvalError> {
    let r = target_ratio(ratios, target)?;
    Ok(1 + ratios.iter().filter(|(c, v)| c.as_str() != target && **v > r).count())
}

fn mean_ratio(ratios: &BTreeMap<String, f64>) -> f64 {
    ratios.values().sum::<f64>() / ratios.len() as f64
}

/// Target ratio minus the mean over all cell lines, target included.
pub fn mean_gap(ratios: &BTreeMap<String, f64>, target: &str) -> Result<f64, EvalError> {
    let r = target_ratio(ratios, target)?;
    Ok(r - mean_ratio(ratios))
}

/// Gap as a percentage of the mean; `None` when the mean is 0.
pub fn relative_dominance(ratios: &BTreeMap<String, f64>, target: &str) -> Result<Option<f64>, EvalError> {
    let gap = mean_gap(ratios, target)?;
    Ok(dominance_from(gap, mean_ratio(ratios)))
}

/// 100 * gap / mean, undefined at mean 0.
pub fn dominance_from(gap: f64, mean: f64) -> Option<f64> {
    (mean != 0.0).then(|| 100.0 * gap / mean)
}

/// Recovers the mean ratio from a reported gap and dominance percentage.
pub fn mean_from_dominance(gap: f64, dominance_pct: f64) -> Option<f64> {
    (dominance_pct != 0.0).then(|| 100.0 * gap / dominance_pct)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecificityReport {
    pub drug: String,
    pub ratios: BTreeMap<String, f64>,
    pub target_cell: String,
    pub target_rank: usize,
    pub mean_ratio: f64,
    pub mean_gap: f64,
    /// Absent when the mean ratio is 0.
    pub relative_dominance_pct: Option<f64>,
}

impl SpecificityReport {
    pub fn new(drug: &str, ratios: BTreeMap<String, f64>, target: &str) -> Result<Self, EvalError> {
        let target_rank = target_rank(&ratios, target)?;
        let mean = mean_ratio(&ratios);
        let gap = ratios[target] - mean;
        Ok(Self {
            drug: drug.to_string(),
            target_cell: target.to_string(),
            target_rank,
            mean_ratio: mean,
            mean_gap: gap,
            relative_dominance_pct: dominance_from(gap, mean),
            ratios,
        })
    }

    /// |dominance - 100 * gap / mean|, or 0 when dominance is undefined.
    pub fn identity_residual(&self) -> f64 {
        match self.relative_dominance_pct {
            Some(d) => (d - 100.0 * self.mean_gap / self.mean_ratio).abs(),
            None => 0.0,
        }
    }
}

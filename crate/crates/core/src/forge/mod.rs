//! Benchmark curation: quality filtering of per-condition signatures,
//! directional-consistency consensus, and query gene selection.

pub mod de;
pub mod io;

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seed::{derive_seed, unit_draw};
use crate::types::{ContextId, Direction, Query};

#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("no conditions")]
    NoConditions,
    #[error("length mismatch: {zs} z-scores but {weights} weights")]
    LengthMismatch { zs: usize, weights: usize },
    #[error("replicate weight must be positive")]
    ZeroWeight,
    #[error("conditions span more than one (cell line, compound) pair: {first} and {other}")]
    MixedPairs { first: ContextId, other: ContextId },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationType {
    Compound,
    Genetic,
    Other,
}

impl PerturbationType {
    /// Accepts both plain names and LINCS `pert_type` codes.
    pub fn parse(raw: &str) -> Self {
        match raw.trim().to_ascii_lowercase().as_str() {
            "compound" | "trt_cp" => PerturbationType::Compound,
            "genetic" | "trt_sh" | "trt_oe" | "trt_xpr" | "trt_sh.cgs" | "trt_oe.mut" => {
                PerturbationType::Genetic
            }
            _ => PerturbationType::Other,
        }
    }
}

/// One experimental condition's z-score profile for a (cell line, compound).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSignature {
    pub condition_id: String,
    pub cell_line: String,
    pub compound: String,
    pub dose_um: Option<f64>,
    pub time_h: Option<f64>,
    pub replicate_count: u32,
    pub high_quality: bool,
    pub qc_pass: bool,
    pub perturbation_type: PerturbationType,
    pub gene_z: BTreeMap<String, f64>,
}

impl ConditionSignature {
    pub fn context(&self) -> ContextId {
        ContextId::new(&self.cell_line, &self.compound)
    }
}

#[derive(Debug, Clone)]
pub struct QualityPolicy {
    pub require_high_quality: bool,
    pub require_qc_pass: bool,
    pub perturbation_type: PerturbationType,
    /// Compounds with a MoA annotation. `None` disables the annotation check.
    pub annotated_compounds: Option<BTreeSet<String>>,
}

impl Default for QualityPolicy {
    fn default() -> Self {
        Self {
            require_high_quality: true,
            require_qc_pass: true,
            perturbation_type: PerturbationType::Compound,
            annotated_compounds: None,
        }
    }
}

impl QualityPolicy {
    pub fn accepts(&self, sig: &ConditionSignature) -> bool {
        sig.perturbation_type == self.perturbation_type
            && (!self.require_high_quality || sig.high_quality)
            && (!self.require_qc_pass || sig.qc_pass)
            && self
                .annotated_compounds
                .as_ref()
                .is_none_or(|set| set.contains(&sig.compound))
    }
}

/// Keeps the signatures the policy accepts, in input order.
pub fn filter_signatures(raw: &[ConditionSignature], policy: &QualityPolicy) -> Vec<ConditionSignature> {
    raw.iter().filter(|s| policy.accepts(s)).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionCounts {
    pub n_up: usize,
    pub n_down: usize,
    pub n_total: usize,
    pub consistency: f64,
}

/// Counts up/down conditions for one gene. A z of exactly zero counts toward
/// the total only.
pub fn directional_consistency(zs: &[f64]) -> Result<DirectionCounts, ForgeError> {
    if zs.is_empty() {
        return Err(ForgeError::NoConditions);
    }
    let n_up = zs.iter().filter(|&&z| z > 0.0).count();
    let n_down = zs.iter().filter(|&&z| z < 0.0).count();
    let n_total = zs.len();
    Ok(DirectionCounts {
        n_up,
        n_down,
        n_total,
        consistency: n_up.max(n_down) as f64 / n_total as f64,
    })
}

/// Replicate-weighted mean of per-condition z-scores.
pub fn consensus_z(zs: &[f64], weights: &[u32]) -> Result<f64, ForgeError> {
    if zs.len() != weights.len() {
        return Err(ForgeError::LengthMismatch {
            zs: zs.len(),
            weights: weights.len(),
        });
    }
    if zs.is_empty() {
        return Err(ForgeError::NoConditions);
    }
    if weights.contains(&0) {
        return Err(ForgeError::ZeroWeight);
    }
    let total: f64 = weights.iter().map(|&w| f64::from(w)).sum();
    let weighted: f64 = zs.iter().zip(weights).map(|(z, &w)| f64::from(w) * z).sum();
    Ok(weighted / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRecord {
    pub gene: String,
    pub n_up: usize,
    pub n_down: usize,
    pub n_total: usize,
    pub consistency: f64,
    pub consensus_z: f64,
    pub direction: Direction,
}

pub const DEFAULT_CONSISTENCY_THRESHOLD: f64 = 0.7;

/// Builds per-gene consensus records for one (cell line, compound) pair,
/// keeping genes whose directional consistency is at least `threshold`.
///
/// Each gene aggregates over the conditions that report it. Conditions are
/// visited in `condition_id` order so the result does not depend on input
/// order.
pub fn build_consensus(conds: &[ConditionSignature], threshold: f64) -> Result<Vec<ConsensusRecord>, ForgeError> {
    let Some(first) = conds.first() else {
        return Ok(Vec::new());
    };
    let pair = first.context();
    if let Some(other) = conds.iter().map(|c| c.context()).find(|c| *c != pair) {
        return Err(ForgeError::MixedPairs { first: pair, other });
    }

    let mut ordered: Vec<&ConditionSignature> = conds.iter().collect();
    ordered.sort_by(|a, b| a.condition_id.cmp(&b.condition_id));

    let mut per_gene: BTreeMap<&str, (Vec<f64>, Vec<u32>)> = BTreeMap::new();
    for cond in &ordered {
        for (gene, &z) in &cond.gene_z {
            let entry = per_gene.entry(gene.as_str()).or_default();
            entry.0.push(z);
            entry.1.push(cond.replicate_count);
        }
    }

    let mut records = Vec::new();
    for (gene, (zs, ws)) in per_gene {
        let counts = directional_consistency(&zs)?;
        if counts.consistency < threshold {
            continue;
        }
        let z = consensus_z(&zs, &ws)?;
        records.push(ConsensusRecord {
            gene: gene.to_string(),
            n_up: counts.n_up,
            n_down: counts.n_down,
            n_total: counts.n_total,
            consistency: counts.consistency,
            consensus_z: z,
            direction: Direction::from_z(z),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub cell_line: String,
    pub compound: String,
    pub moa: String,
    pub gene: String,
    pub label: Direction,
    pub consensus_z: f64,
    pub consistency: f64,
    pub split: Split,
}

impl BenchmarkItem {
    /// The label-free view handed to everything downstream of curation.
    pub fn query(&self) -> Query {
        Query {
            cell_line: self.cell_line.clone(),
            compound: self.compound.clone(),
            moa: self.moa.clone(),
            gene: self.gene.clone(),
        }
    }
}

/// Optional mechanistic-plausibility screen applied after |z| ranking.
pub trait PlausibilityFilter: Send + Sync {
    fn keep(&self, moa: &str, record: &ConsensusRecord) -> bool;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct PassThrough;

impl PlausibilityFilter for PassThrough {
    fn keep(&self, _moa: &str, _record: &ConsensusRecord) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionParams {
    pub per_direction: usize,
    pub min_consistent: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            per_direction: 10,
            min_consistent: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub items: Vec<BenchmarkItem>,
    pub rejected: Option<String>,
}

/// Picks up to `per_direction` genes per direction by descending |z|
/// (ties by gene symbol). Pairs with fewer than `min_consistent` records are
/// rejected outright.
pub fn select_query_genes(
    records: &[ConsensusRecord],
    cell_line: &str,
    compound: &str,
    moa: &str,
    params: SelectionParams,
    plausibility: &dyn PlausibilityFilter,
) -> Selection {
    if records.len() < params.min_consistent {
        return Selection {
            items: Vec::new(),
            rejected: Some(format!(
                "only {} consistently regulated genes (minimum {})",
                records.len(),
                params.min_consistent
            )),
        };
    }
    let mut ranked: Vec<&ConsensusRecord> = records.iter().collect();
    ranked.sort_by(|a, b| {
        b.consensus_z
            .abs()
            .total_cmp(&a.consensus_z.abs())
            .then_with(|| a.gene.cmp(&b.gene))
    });

    let mut taken_up = 0usize;
    let mut taken_down = 0usize;
    let mut items = Vec::new();
    for rec in ranked {
        let slot = match rec.direction {
            Direction::Up => &mut taken_up,
            Direction::Down => &mut taken_down,
        };
        if *slot >= params.per_direction || !plausibility.keep(moa, rec) {
            continue;
        }
        *slot += 1;
        items.push(BenchmarkItem {
            cell_line: cell_line.to_string(),
            compound: compound.to_string(),
            moa: moa.to_string(),
            gene: rec.gene.clone(),
            label: rec.direction,
            consensus_z: rec.consensus_z,
            consistency: rec.consistency,
            split: Split::Test,
        });
        if taken_up >= params.per_direction && taken_down >= params.per_direction {
            break;
        }
    }
    let rejected = items
        .is_empty()
        .then(|| "no genes survived the plausibility filter".to_string());
    Selection { items, rejected }
}

#[derive(Debug, Clone)]
pub struct BuildParams {
    pub threshold: f64,
    pub selection: SelectionParams,
    /// Fraction of pairs assigned to the test split.
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_CONSISTENCY_THRESHOLD,
            selection: SelectionParams::default(),
            test_fraction: 1.0,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRejection {
    pub cell_line: String,
    pub compound: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkBuild {
    pub items: Vec<BenchmarkItem>,
    pub rejected: Vec<PairRejection>,
}

type PairOutcome = Result<(Vec<BenchmarkItem>, Option<PairRejection>), ForgeError>;

/// Full curation pass over already-filtered signatures: groups by pair,
/// builds the consensus and selects query genes. Pairs without a MoA
/// annotation are rejected.
pub fn build_benchmark(
    signatures: &[ConditionSignature],
    moa_of: &BTreeMap<String, String>,
    params: &BuildParams,
    plausibility: &dyn PlausibilityFilter,
) -> Result<BenchmarkBuild, ForgeError> {
    let mut groups: BTreeMap<ContextId, Vec<ConditionSignature>> = BTreeMap::new();
    for sig in signatures {
        groups.entry(sig.context()).or_default().push(sig.clone());
    }
    let groups: Vec<(ContextId, Vec<ConditionSignature>)> = groups.into_iter().collect();

    let per_pair: Vec<PairOutcome> = groups
        .par_iter()
        .map(|(ctx, conds)| {
            let reject = |reason: String| PairRejection {
                cell_line: ctx.cell_line.clone(),
                compound: ctx.compound.clone(),
                reason,
            };
            let moa = match moa_of.get(&ctx.compound).filter(|m| !m.trim().is_empty()) {
                Some(m) => m,
                None => return Ok((Vec::new(), Some(reject("compound has no MoA annotation".into())))),
            };
            let records = build_consensus(conds, params.threshold)?;
            let selection = select_query_genes(
                &records,
                &ctx.cell_line,
                &ctx.compound,
                moa,
                params.selection,
                plausibility,
            );
            let split = if unit_draw(derive_seed(params.split_seed, &["split", &ctx.cell_line, &ctx.compound]))
                < params.test_fraction
            {
                Split::Test
            } else {
                Split::Train
            };
            let items = selection
                .items
                .into_iter()
                .map(|mut item| {
                    item.split = split;
                    item
                })
                .collect();
            Ok((items, selection.rejected.map(reject)))
        })
        .collect();

    let mut build = BenchmarkBuild::default();
    for result in per_pair {
        let (items, rejection) = result?;
        build.items.extend(items);
        build.rejected.extend(rejection);
    }
    Ok(build)
}

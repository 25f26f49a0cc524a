use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{agreement_ratio, aggregate_runs, auroc, EvalError, PredictionRecord, SpecificityReport};
use crate::tsv::{Table, TableError};
use crate::types::Direction;

pub const UNASSIGNED: &str = "unassigned";

/// Cell line to category (tissue, cancer type, ...).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryMap {
    pub map: BTreeMap<String, String>,
}

impl CategoryMap {
    pub fn load(path: &Path) -> Result<Self, TableError> {
        let table = Table::read(path)?;
        let cell = table.column("cell_line")?;
        let cat = table.column("category")?;
        Ok(Self {
            map: table
                .rows
                .iter()
                .map(|r| (r.get(cell).to_string(), r.get(cat).to_string()))
                .collect(),
        })
    }

    pub fn category(&self, cell_line: &str) -> &str {
        self.map.get(cell_line).map_or(UNASSIGNED, String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    /// One AUROC over every record of the category in a run.
    #[default]
    Pooled,
    /// Mean of per-(cell line, compound) AUROCs within the category.
    PerPerturbation,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    pub mode: AggregationMode,
    /// Drop predictions no vote of which passed the judges.
    pub accepted_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    pub n_records: usize,
    pub run_auroc: Vec<Option<f64>>,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub agreement_mean: Option<f64>,
    pub agreement_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: AggregationMode,
    pub accepted_only: bool,
    pub runs: Vec<u32>,
    pub dropped_unverified: usize,
    pub categories: Vec<CategoryRow>,
    pub overall: CategoryRow,
}

fn scored(records: &[&PredictionRecord]) -> Vec<(f64, bool)> {
    records.iter().map(|r| (r.score, r.true_label == Direction::Up)).collect()
}

fn run_auroc(records: &[&PredictionRecord], mode: AggregationMode) -> Result<Option<f64>, EvalError> {
    match mode {
        AggregationMode::Pooled => auroc(&scored(records)),
        AggregationMode::PerPerturbation => {
            let mut groups: BTreeMap<(&str, &str), Vec<&PredictionRecord>> = BTreeMap::new();
            for r in records {
                groups.entry((&r.cell_line, &r.compound)).or_default().push(r);
            }
            let mut defined = Vec::new();
            for g in groups.values() {
                if let Some(a) = auroc(&scored(g))? {
                    defined.push(a);
                }
            }
            Ok(aggregate_runs(&defined).map(|(m, _)| m))
        }
    }
}

fn category_row(
    name: &str,
    records: &[&PredictionRecord],
    runs: &[u32],
    mode: AggregationMode,
) -> Result<CategoryRow, EvalError> {
    let mut run_auroc = Vec::with_capacity(runs.len());
    let mut agreements = Vec::new();
    for &run in runs {
        let in_run: Vec<&PredictionRecord> = records.iter().copied().filter(|r| r.run_id == run).collect();
        run_auroc.push(run_auroc_or_none(&in_run, mode)?);
        let owned: Vec<PredictionRecord> = in_run.iter().map(|r| (*r).clone()).collect();
        if let Some(a) = agreement_ratio(&owned) {
            agreements.push(a);
        }
    }
    let defined: Vec<f64> = run_auroc.iter().flatten().copied().collect();
    let auroc_stats = aggregate_runs(&defined);
    let agreement_stats = aggregate_runs(&agreements);
    let undefined = run_auroc.iter().filter(|a| a.is_none()).count();
    let note = (undefined > 0).then(|| {
        format!("AUROC undefined in {undefined} of {} run(s): single class; excluded from the mean", runs.len())
    });
    Ok(CategoryRow {
        category: name.to_string(),
        n_records: records.len(),
        run_auroc,
        auroc_mean: auroc_stats.map(|s| s.0),
        auroc_std: auroc_stats.map(|s| s.1),
        agreement_mean: agreement_stats.map(|s| s.0),
        agreement_std: agreement_stats.map(|s| s.1),
        note,
    })
}

fn run_auroc_or_none(records: &[&PredictionRecord], mode: AggregationMode) -> Result<Option<f64>, EvalError> {
    if records.is_empty() {
        return Ok(None);
    }
    run_auroc(records, mode)
}

/// Per-category AUROC and agreement, mean and std over runs.
pub fn evaluate(
    records: &[PredictionRecord],
    categories: &CategoryMap,
    opts: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let kept: Vec<PredictionRecord> = records
        .iter()
        .filter(|r| r.verified || !opts.accepted_only)
        .map(|r| {
            let mut r = r.clone();
            r.category = Some(categories.category(&r.cell_line).to_string());
            r
        })
        .collect();
    let runs: Vec<u32> = kept.iter().map(|r| r.run_id).collect::<BTreeSet<_>>().into_iter().collect();
    let mut by_cat: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in &kept {
        by_cat.entry(r.category.as_deref().unwrap_or(UNASSIGNED)).or_default().push(r);
    }
    let rows = by_cat
        .iter()
        .map(|(name, recs)| category_row(name, recs, &runs, opts.mode))
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<&PredictionRecord> = kept.iter().collect();
    Ok(EvalReport {
        mode: opts.mode,
        accepted_only: opts.accepted_only,
        runs,
        dropped_unverified: records.len() - kept.len(),
        categories: rows,
        overall: category_row("all", &all, &runs_of(&kept), opts.mode)?,
    })
}

fn runs_of(records: &[PredictionRecord]) -> Vec<u32> {
    records.iter().map(|r| r.run_id).collect::<BTreeSet<_>>().into_iter().collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn fmt_pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
        _ => "n/a".to_string(),
    }
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                let _ = write!(line, "{cell}{}", " ".repeat(pad));
            } else {
                let _ = write!(line, "  {}{cell}", " ".repeat(pad));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut rows = vec![vec![
            "category".to_string(),
            "n".to_string(),
            "AUROC".to_string(),
            "agreement".to_string(),
            "runs".to_string(),
        ]];
        for r in self.categories.iter().chain(std::iter::once(&self.overall)) {
            let defined = r.run_auroc.iter().flatten().count();
            rows.push(vec![
                r.category.clone(),
                r.n_records.to_string(),
                fmt_pm(r.auroc_mean, r.auroc_std),
                fmt_opt(r.agreement_mean),
                format!("{defined}/{}", r.run_auroc.len()),
            ]);
        }
        let mut out = aligned(&rows);
        for r in &self.categories {
            if let Some(note) = &r.note {
                let _ = writeln!(out, "note: {}: {note}", r.category);
            }
        }
        out
    }
}

/// Agreement ratio per cell line for one compound, pooled over runs, and
/// the specificity of `target` among them.
pub fn case_study(records: &[PredictionRecord], drug: &str, target: &str) -> Result<SpecificityReport, EvalError> {
    let mut by_cell: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.compound == drug) {
        by_cell.entry(r.cell_line.clone()).or_default().push(r.clone());
    }
    let ratios = by_cell
        .into_iter()
        .filter_map(|(cell, recs)| agreement_ratio(&recs).map(|a| (cell, a)))
        .collect();
    SpecificityReport::new(drug, ratios, target)
}

impl SpecificityReport {
    pub fn render_table(&self) -> String {
        let mut rows = vec![vec!["cell_line".to_string(), "agreement".to_string()]];
        for (cell, r) in &self.ratios {
            let mark = if *cell == self.target_cell { " (target)" } else { "" };
            rows.push(vec![format!("{cell}{mark}"), format!("{r:.3}")]);
        }
        let mut out = aligned(&rows);
        let _ = writeln!(out, "drug: {}", self.drug);
        let _ = writeln!(out, "target rank: {} of {}", self.target_rank, self.ratios.len());
        let _ = writeln!(out, "mean gap: {:.3}", self.mean_gap);
        let _ = writeln!(
            out,
            "relative dominance: {}",
            self.relative_dominance_pct
                .map_or_else(|| "undefined (mean ratio is 0)".to_string(), |d| format!("{d:.1}%"))
        );
        out
    }
}

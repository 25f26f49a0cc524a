//! Long-form TSV inputs for curation and the pseudobulk DE path.
//!
//! `conditions.tsv`: condition_id, cell_line, compound, dose_um, time_h,
//! replicate_count, is_hiq, qc_pass, pert_type
//!
//! `zscores.tsv`: condition_id, gene, z
//!
//! `compound_moa.tsv`: compound, moa
//!
//! `pseudobulk.tsv`: group (treated|control), cell_line, time_h, n_cells, gene, count
//!
//! `cells.tsv`: group (treated|control), cell_id, gene, value

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::de::PseudobulkMatrix;
use super::{ConditionSignature, ForgeError, PerturbationType};
use crate::tsv::{parse_f64, parse_flag, parse_optional_f64, RowDiagnostic, Table, TableError};

impl From<TableError> for ForgeError {
    fn from(err: TableError) -> Self {
        match err {
            TableError::Io { path, source } => ForgeError::Io { path, source },
            other => ForgeError::Format {
                path: String::new(),
                message: other.to_string(),
            },
        }
    }
}

/// Signatures plus the rows that were rejected while reading them.
#[derive(Debug, Default)]
pub struct LoadedSignatures {
    pub signatures: Vec<ConditionSignature>,
    pub diagnostics: Vec<RowDiagnostic>,
}

pub fn load_signatures(conditions: &Path, zscores: &Path) -> Result<LoadedSignatures, ForgeError> {
    let cond_table = Table::read(conditions)?;
    let z_table = Table::read(zscores)?;
    Ok(parse_signatures(&cond_table, &z_table)?)
}

pub fn parse_signatures(cond_table: &Table, z_table: &Table) -> Result<LoadedSignatures, TableError> {
    let c_id = cond_table.column("condition_id")?;
    let c_cell = cond_table.column("cell_line")?;
    let c_cmp = cond_table.column("compound")?;
    let c_dose = cond_table.column("dose_um")?;
    let c_time = cond_table.column("time_h")?;
    let c_reps = cond_table.column("replicate_count")?;
    let c_hiq = cond_table.column("is_hiq")?;
    let c_qc = cond_table.column("qc_pass")?;
    let c_type = cond_table.column("pert_type")?;

    let mut out = LoadedSignatures::default();
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, ConditionSignature> = BTreeMap::new();

    for row in &cond_table.rows {
        if row.len() != cond_table.width() {
            out.diagnostics.push(cond_table.diagnostic(
                row,
                format!("expected {} columns, found {}", cond_table.width(), row.len()),
            ));
            continue;
        }
        let parsed = (|| -> Result<ConditionSignature, String> {
            let id = row.get(c_id);
            if id.is_empty() {
                return Err("empty condition_id".into());
            }
            let reps: u32 = row
                .get(c_reps)
                .parse()
                .map_err(|_| format!("replicate_count: invalid {:?}", row.get(c_reps)))?;
            if reps == 0 {
                return Err("replicate_count must be >= 1".into());
            }
            if row.get(c_cell).is_empty() || row.get(c_cmp).is_empty() {
                return Err("empty cell_line or compound".into());
            }
            Ok(ConditionSignature {
                condition_id: id.to_string(),
                cell_line: row.get(c_cell).to_string(),
                compound: row.get(c_cmp).to_string(),
                dose_um: parse_optional_f64(row.get(c_dose), "dose_um")?,
                time_h: parse_optional_f64(row.get(c_time), "time_h")?,
                replicate_count: reps,
                high_quality: parse_flag(row.get(c_hiq), "is_hiq")?,
                qc_pass: parse_flag(row.get(c_qc), "qc_pass")?,
                perturbation_type: PerturbationType::parse(row.get(c_type)),
                gene_z: BTreeMap::new(),
            })
        })();
        match parsed {
            Ok(sig) if by_id.contains_key(&sig.condition_id) => out.diagnostics.push(
                cond_table.diagnostic(row, format!("duplicate condition_id {:?}", sig.condition_id)),
            ),
            Ok(sig) => {
                order.push(sig.condition_id.clone());
                by_id.insert(sig.condition_id.clone(), sig);
            }
            Err(msg) => out.diagnostics.push(cond_table.diagnostic(row, msg)),
        }
    }

    let z_id = z_table.column("condition_id")?;
    let z_gene = z_table.column("gene")?;
    let z_val = z_table.column("z")?;
    for row in &z_table.rows {
        let Some(sig) = by_id.get_mut(row.get(z_id)) else {
            out.diagnostics.push(z_table.diagnostic(
                row,
                format!("unknown or rejected condition_id {:?}", row.get(z_id)),
            ));
            continue;
        };
        let gene = row.get(z_gene);
        if gene.is_empty() {
            out.diagnostics.push(z_table.diagnostic(row, "empty gene"));
            continue;
        }
        match parse_f64(row.get(z_val), "z") {
            Ok(z) => {
                if sig.gene_z.insert(gene.to_string(), z).is_some() {
                    out.diagnostics.push(z_table.diagnostic(
                        row,
                        format!("duplicate gene {gene:?} for condition; last value kept"),
                    ));
                }
            }
            Err(msg) => out.diagnostics.push(z_table.diagnostic(row, msg)),
        }
    }

    out.signatures = order
        .into_iter()
        .filter_map(|id| by_id.remove(&id))
        .collect();
    Ok(out)
}

pub fn load_compound_moa(path: &Path) -> Result<BTreeMap<String, String>, ForgeError> {
    let table = Table::read(path)?;
    let c = table.column("compound")?;
    let m = table.column("moa")?;
    let mut map = BTreeMap::new();
    for row in &table.rows {
        if !row.get(m).is_empty() {
            map.insert(row.get(c).to_string(), row.get(m).to_string());
        }
    }
    Ok(map)
}

/// Pseudobulk profiles and per-cell values for both arms of a DE comparison.
#[derive(Debug, Clone)]
pub struct DeInputs {
    pub treated: PseudobulkMatrix,
    pub control: PseudobulkMatrix,
    pub cells_treated: BTreeMap<String, Vec<f64>>,
    pub cells_control: BTreeMap<String, Vec<f64>>,
    pub diagnostics: Vec<RowDiagnostic>,
}

pub fn load_de_inputs(pseudobulk: &Path, cells: &Path) -> Result<DeInputs, ForgeError> {
    let pb = Table::read(pseudobulk)?;
    let g = pb.column("group")?;
    let cl = pb.column("cell_line")?;
    let t = pb.column("time_h")?;
    let n = pb.column("n_cells")?;
    let gene = pb.column("gene")?;
    let count = pb.column("count")?;

    let mut diagnostics = Vec::new();
    let empty = |group: &str| PseudobulkMatrix {
        cell_line: String::new(),
        time_h: 0.0,
        gene_counts: BTreeMap::new(),
        n_cells: 0,
        group: group.to_string(),
    };
    let mut treated = empty("treated");
    let mut control = empty("control");

    for row in &pb.rows {
        let target = match row.get(g) {
            "treated" => &mut treated,
            "control" => &mut control,
            other => {
                diagnostics.push(pb.diagnostic(row, format!("unknown group {other:?}")));
                continue;
            }
        };
        let parsed = (|| -> Result<(f64, u32, f64), String> {
            let time = parse_f64(row.get(t), "time_h")?;
            let cells: u32 = row
                .get(n)
                .parse()
                .map_err(|_| format!("n_cells: invalid {:?}", row.get(n)))?;
            if cells == 0 {
                return Err("n_cells must be >= 1".into());
            }
            let c = parse_f64(row.get(count), "count")?;
            if c < 0.0 {
                return Err("count must be non-negative".into());
            }
            Ok((time, cells, c))
        })();
        match parsed {
            Ok((time, cells, c)) => {
                target.cell_line = row.get(cl).to_string();
                target.time_h = time;
                target.n_cells = cells;
                target.gene_counts.insert(row.get(gene).to_string(), c);
            }
            Err(msg) => diagnostics.push(pb.diagnostic(row, msg)),
        }
    }

    let ct = Table::read(cells)?;
    let cg = ct.column("group")?;
    let cgene = ct.column("gene")?;
    let cval = ct.column("value")?;
    let _ = ct.column("cell_id")?;
    let mut cells_treated: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut cells_control: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for row in &ct.rows {
        let target = match row.get(cg) {
            "treated" => &mut cells_treated,
            "control" => &mut cells_control,
            other => {
                diagnostics.push(ct.diagnostic(row, format!("unknown group {other:?}")));
                continue;
            }
        };
        match parse_f64(row.get(cval), "value") {
            Ok(v) => target.entry(row.get(cgene).to_string()).or_default().push(v),
            Err(msg) => diagnostics.push(ct.diagnostic(row, msg)),
        }
    }

    Ok(DeInputs {
        treated,
        control,
        cells_treated,
        cells_control,
        diagnostics,
    })
}

/// Distinct (cell line, compound) pairs present in a signature set.
pub fn pairs(signatures: &[ConditionSignature]) -> BTreeSet<(String, String)> {
    signatures
        .iter()
        .map(|s| (s.cell_line.clone(), s.compound.clone()))
        .collect()
}

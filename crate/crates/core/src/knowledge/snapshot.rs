//! Offline interaction snapshot: `string_edges.tsv` with columns
//! geneA, geneB, combined_score (0-1000).

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{pair_key, InteractionSource, KnowledgeError, Provenance};
use crate::tsv::{parse_f64, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub gene_a: String,
    pub gene_b: String,
    pub combined_score: f64,
}

impl Edge {
    pub fn new(a: &str, b: &str, combined_score: f64) -> Self {
        Self {
            gene_a: a.to_string(),
            gene_b: b.to_string(),
            combined_score,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SnapshotSource {
    edges: HashMap<(String, String), f64>,
}

impl SnapshotSource {
    /// Duplicate pairs (in either orientation) keep the highest score.
    pub fn from_edges(edges: impl IntoIterator<Item = Edge>) -> Self {
        let mut map: HashMap<(String, String), f64> = HashMap::new();
        for e in edges {
            let slot = map.entry(pair_key(&e.gene_a, &e.gene_b)).or_insert(e.combined_score);
            *slot = slot.max(e.combined_score);
        }
        Self { edges: map }
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        Ok(Self::from_edges(read_edges(path)?))
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges in canonical (sorted pair) orientation and order.
    pub fn edges(&self) -> Vec<Edge> {
        let sorted: BTreeMap<_, _> = self.edges.iter().collect();
        sorted
            .into_iter()
            .map(|((a, b), s)| Edge::new(a, b, *s))
            .collect()
    }
}

impl InteractionSource for SnapshotSource {
    fn combined_score(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
        Ok(self.edges.get(&pair_key(a, b)).copied())
    }

    fn provenance(&self) -> Provenance {
        Provenance::Snapshot
    }
}

pub fn read_edges(path: &Path) -> Result<Vec<Edge>, KnowledgeError> {
    let table = Table::read(path)?;
    let a = table.column("geneA")?;
    let b = table.column("geneB")?;
    let s = table.column("combined_score")?;
    let mut edges = Vec::with_capacity(table.rows.len());
    for row in &table.rows {
        let score = parse_f64(row.get(s), "combined_score").map_err(|message| {
            crate::tsv::TableError::Row {
                path: table.path.clone(),
                line: row.line,
                message,
            }
        })?;
        edges.push(Edge::new(row.get(a), row.get(b), score));
    }
    Ok(edges)
}

pub fn write_edges(path: &Path, edges: &[Edge]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "geneA\tgeneB\tcombined_score")?;
    for e in edges {
        writeln!(out, "{}\t{}\t{}", e.gene_a, e.gene_b, e.combined_score)?;
    }
    out.flush()
}

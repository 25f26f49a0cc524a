//! Biological relatedness from a protein-interaction source: MoA targets to
//! query genes and gene to gene, normalised to [0, 1].

pub mod live;
pub mod snapshot;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

pub use live::{LiveConfig, LiveStringSource};
pub use snapshot::{Edge, SnapshotSource};

use crate::tsv::{Table, TableError};

/// Raw combined scores are on a 0-1000 scale.
pub const SCORE_SCALE: f64 = 1000.0;

#[derive(Debug, thiserror::Error)]
pub enum KnowledgeError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("MoA {0:?} has no target mapping")]
    UnmappedMoa(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LiveApi,
    Snapshot,
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatednessScore {
    pub source_gene: String,
    pub query_gene: String,
    pub score: f64,
    pub provenance: Provenance,
}

impl RelatednessScore {
    fn absent(source: &str, query: &str) -> Self {
        Self {
            source_gene: source.to_string(),
            query_gene: query.to_string(),
            score: 0.0,
            provenance: Provenance::Absent,
        }
    }
}

/// A source of raw pairwise combined scores (0-1000). `Ok(None)` means the
/// source answered and there is no edge.
pub trait InteractionSource: Send + Sync {
    fn combined_score(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError>;
    fn provenance(&self) -> Provenance;
}

impl<T: InteractionSource + ?Sized> InteractionSource for Arc<T> {
    fn combined_score(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
        (**self).combined_score(a, b)
    }
    fn provenance(&self) -> Provenance {
        (**self).provenance()
    }
}

/// Unordered pair key.
pub(crate) fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Memoises another source. Lookups take a read lock; a miss computes
/// outside the lock and inserts under a write lock.
pub struct CachedSource<S> {
    inner: S,
    cache: RwLock<HashMap<(String, String), Option<f64>>>,
}

impl<S: InteractionSource> CachedSource<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn cached_pairs(&self) -> usize {
        self.cache.read().expect("cache lock poisoned").len()
    }
}

impl<S: InteractionSource> InteractionSource for CachedSource<S> {
    fn combined_score(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
        let key = pair_key(a, b);
        if let Some(hit) = self.cache.read().expect("cache lock poisoned").get(&key) {
            return Ok(*hit);
        }
        let value = self.inner.combined_score(a, b)?;
        self.cache
            .write()
            .expect("cache lock poisoned")
            .insert(key, value);
        Ok(value)
    }

    fn provenance(&self) -> Provenance {
        self.inner.provenance()
    }
}

/// Tries the primary source, falling back to a snapshot when the primary is
/// unavailable.
pub struct FallbackSource<P> {
    pub primary: P,
    pub snapshot: Option<SnapshotSource>,
}

impl<P: InteractionSource> InteractionSource for FallbackSource<P> {
    fn combined_score(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
        match self.primary.combined_score(a, b) {
            Err(KnowledgeError::Unavailable(msg)) => match &self.snapshot {
                Some(snap) => {
                    tracing::warn!("live interaction lookup failed ({msg}); using snapshot");
                    snap.combined_score(a, b)
                }
                None => Err(KnowledgeError::Unavailable(msg)),
            },
            other => other,
        }
    }

    fn provenance(&self) -> Provenance {
        self.primary.provenance()
    }
}

/// MoA annotation to target genes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MoaTargetMap {
    pub targets: BTreeMap<String, Vec<String>>,
}

impl MoaTargetMap {
    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let table = Table::read(path)?;
        let m = table.column("moa")?;
        let g = table.column("gene")?;
        let mut targets: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for row in &table.rows {
            if row.get(m).is_empty() || row.get(g).is_empty() {
                continue;
            }
            let list = targets.entry(row.get(m).to_string()).or_default();
            if !list.iter().any(|x| x == row.get(g)) {
                list.push(row.get(g).to_string());
            }
        }
        Ok(Self { targets })
    }

    pub fn get(&self, moa: &str) -> Option<&[String]> {
        self.targets.get(moa).map(Vec::as_slice).filter(|t| !t.is_empty())
    }

    /// MoAs in `moas` with no target entry.
    pub fn unmapped<'a>(&self, moas: impl IntoIterator<Item = &'a str>) -> Vec<String> {
        let mut out: Vec<String> = moas
            .into_iter()
            .filter(|m| self.get(m).is_none())
            .map(str::to_string)
            .collect();
        out.sort();
        out.dedup();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetAggregation {
    #[default]
    Max,
    Mean,
}

pub struct KnowledgeBase {
    pub targets: MoaTargetMap,
    source: Box<dyn InteractionSource>,
    pub aggregation: TargetAggregation,
    /// Error on unmapped MoAs instead of scoring them 0.
    pub strict: bool,
    /// Score 0 instead of failing when the provider is unavailable.
    pub degrade_unavailable: bool,
}

impl KnowledgeBase {
    pub fn new(targets: MoaTargetMap, source: impl InteractionSource + 'static) -> Self {
        Self {
            targets,
            source: Box::new(source),
            aggregation: TargetAggregation::Max,
            strict: false,
            degrade_unavailable: false,
        }
    }

    fn lookup(&self, a: &str, b: &str) -> Result<Option<f64>, KnowledgeError> {
        match self.source.combined_score(a, b) {
            Err(KnowledgeError::Unavailable(msg)) if self.degrade_unavailable => {
                tracing::warn!("interaction provider unavailable ({msg}); scoring {a}-{b} as 0");
                Ok(None)
            }
            other => other,
        }
    }

    pub fn gene_gene(&self, g1: &str, g2: &str) -> Result<RelatednessScore, KnowledgeError> {
        if g1 == g2 {
            return Ok(RelatednessScore {
                source_gene: g1.to_string(),
                query_gene: g2.to_string(),
                score: 1.0,
                provenance: self.source.provenance(),
            });
        }
        Ok(match self.lookup(g1, g2)? {
            Some(raw) => RelatednessScore {
                source_gene: g1.to_string(),
                query_gene: g2.to_string(),
                score: (raw / SCORE_SCALE).clamp(0.0, 1.0),
                provenance: self.source.provenance(),
            },
            None => RelatednessScore::absent(g1, g2),
        })
    }

    /// Relatedness of a query gene to a MoA: max (or mean) over the MoA's
    /// target genes of the pairwise score. Direct targets score 1.
    pub fn relatedness(&self, moa: &str, gene: &str) -> Result<RelatednessScore, KnowledgeError> {
        let Some(targets) = self.targets.get(moa) else {
            if self.strict {
                return Err(KnowledgeError::UnmappedMoa(moa.to_string()));
            }
            return Ok(RelatednessScore::absent(moa, gene));
        };
        let mut best: Option<RelatednessScore> = None;
        let mut sum = 0.0;
        let mut any_edge = false;
        for t in targets {
            let s = self.gene_gene(t, gene)?;
            if s.provenance != Provenance::Absent {
                any_edge = true;
            }
            sum += s.score;
            if best.as_ref().is_none_or(|b| s.score > b.score) {
                best = Some(s);
            }
        }
        if !any_edge {
            return Ok(RelatednessScore::absent(&targets[0], gene));
        }
        let best = best.expect("targets non-empty");
        Ok(match self.aggregation {
            TargetAggregation::Max => best,
            TargetAggregation::Mean => RelatednessScore {
                score: sum / targets.len() as f64,
                ..best
            },
        })
    }
}

//! Pseudobulk differential expression labelling: two-sided Mann-Whitney U
//! per gene, Benjamini-Hochberg adjustment, and fold-change gating.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudobulkMatrix {
    pub cell_line: String,
    pub time_h: f64,
    pub gene_counts: BTreeMap<String, f64>,
    pub n_cells: u32,
    /// `treated` or `control`.
    pub group: String,
}

impl PseudobulkMatrix {
    /// Mean per-cell count for a gene.
    pub fn mean_count(&self, gene: &str) -> Option<f64> {
        if self.n_cells == 0 {
            return None;
        }
        self.gene_counts.get(gene).map(|c| c / f64::from(self.n_cells))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeLabel {
    Up,
    Down,
    Unchanged,
}

impl DeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            DeLabel::Up => "up",
            DeLabel::Down => "down",
            DeLabel::Unchanged => "unchanged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U for the first sample: #(x > y) + ½·#(x = y).
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest pooled sample size for which the exact null distribution is
/// computed; `C(60, 30)` still fits in a u64 count.
pub const EXACT_MAX_N: usize = 60;

/// Pooled midranks, doubled so ties stay integral.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && pooled[idx[j]] == pooled[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j averaged, doubled: (i+1 + j)
        let r2 = (i + 1 + j) as u64;
        for &k in &idx[i..j] {
            ranks[k] = r2;
        }
        i = j;
    }
    ranks
}

/// Two-sided Mann-Whitney U test. Uses the exact permutation distribution of
/// the (midrank) rank sum when the pooled size is at most [`EXACT_MAX_N`],
/// otherwise the tie-corrected normal approximation with continuity
/// correction. Returns `None` when either sample is empty.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Option<MannWhitney> {
    let (nx, ny) = (x.len(), y.len());
    if nx == 0 || ny == 0 {
        return None;
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks2 = doubled_midranks(&pooled);
    let rank_sum2: u64 = ranks2[..nx].iter().sum();
    // 2U = 2R - nx(nx+1)
    let u2 = rank_sum2 as i64 - (nx * (nx + 1)) as i64;
    let u = u2 as f64 / 2.0;

    let n = nx + ny;
    if n <= EXACT_MAX_N {
        let p = exact_two_sided(&ranks2, nx, rank_sum2);
        return Some(MannWhitney { u, p_value: p, exact: true });
    }

    let mean = (nx * ny) as f64 / 2.0;
    let mut tie_term = 0.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let nf = n as f64;
    let var = (nx * ny) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Some(MannWhitney { u, p_value: 1.0, exact: false });
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = libm::erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Some(MannWhitney { u, p_value: p, exact: false })
}

/// P(|S - E[S]| >= |s_obs - E[S]|) where S is the (doubled) rank sum of a
/// uniformly random size-`k` subset of the pooled ranks.
fn exact_two_sided(ranks2: &[u64], k: usize, observed: u64) -> f64 {
    let max_sum: usize = ranks2.iter().map(|&r| r as usize).sum();
    // counts[j][s]: number of j-subsets of the ranks seen so far with sum s
    let mut counts = vec![vec![0u64; max_sum + 1]; k + 1];
    counts[0][0] = 1;
    for &r in ranks2 {
        let r = r as usize;
        for j in (1..=k).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    let n = ranks2.len();
    // sums are of doubled ranks, so E[sum] = k(n+1)
    let centre2 = (k * (n + 1)) as i64;
    let dev_obs = (observed as i64 - centre2).abs();
    let mut total: u128 = 0;
    let mut extreme: u128 = 0;
    for (s, &c) in counts[k].iter().enumerate() {
        if c == 0 {
            continue;
        }
        total += u128::from(c);
        if (s as i64 - centre2).abs() >= dev_obs {
            extreme += u128::from(c);
        }
    }
    (extreme as f64 / total as f64).min(1.0)
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let adj = p[i] * m as f64 / (rank + 1) as f64;
        running = running.min(adj);
        q[i] = running.min(1.0);
    }
    q
}

#[derive(Debug, Clone, Copy)]
pub struct DeParams {
    pub fdr: f64,
    pub min_abs_log2fc: f64,
    pub pseudocount: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self {
            fdr: 0.05,
            min_abs_log2fc: 0.5,
            pseudocount: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneTest {
    pub gene: String,
    pub u: f64,
    pub p_value: f64,
    pub q_value: f64,
    pub log2_fold_change: f64,
    pub label: DeLabel,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DeResult {
    pub tests: Vec<GeneTest>,
    pub skipped: Vec<(String, String)>,
}

impl DeResult {
    pub fn labels(&self) -> BTreeMap<String, DeLabel> {
        self.tests.iter().map(|t| (t.gene.clone(), t.label)).collect()
    }
}

/// log2((treated mean + pc) / (control mean + pc)) on mean per-cell counts.
pub fn log2_fold_change(treated_mean: f64, control_mean: f64, pseudocount: f64) -> f64 {
    ((treated_mean + pseudocount) / (control_mean + pseudocount)).log2()
}

/// Labels each gene up/down/unchanged. Genes need at least two per-cell
/// observations on each side and a pseudobulk count on both sides.
pub fn label_pseudobulk_de(
    treated: &PseudobulkMatrix,
    control: &PseudobulkMatrix,
    cells_treated: &BTreeMap<String, Vec<f64>>,
    cells_control: &BTreeMap<String, Vec<f64>>,
    params: DeParams,
) -> DeResult {
    let mut result = DeResult::default();
    let mut pending: Vec<(String, MannWhitney, f64)> = Vec::new();

    let genes: std::collections::BTreeSet<&String> = cells_treated.keys().chain(cells_control.keys()).collect();
    for gene in genes {
        let t = cells_treated.get(gene).map_or(&[][..], Vec::as_slice);
        let c = cells_control.get(gene).map_or(&[][..], Vec::as_slice);
        if t.len() < 2 || c.len() < 2 {
            result.skipped.push((
                gene.clone(),
                format!("need >= 2 cells per side, have {} treated / {} control", t.len(), c.len()),
            ));
            continue;
        }
        let (Some(mt), Some(mc)) = (treated.mean_count(gene), control.mean_count(gene)) else {
            result
                .skipped
                .push((gene.clone(), "missing pseudobulk count".to_string()));
            continue;
        };
        let Some(test) = mann_whitney_u(t, c) else { continue };
        pending.push((gene.clone(), test, log2_fold_change(mt, mc, params.pseudocount)));
    }

    let ps: Vec<f64> = pending.iter().map(|(_, t, _)| t.p_value).collect();
    let qs = benjamini_hochberg(&ps);
    for ((gene, test, lfc), q) in pending.into_iter().zip(qs) {
        let label = if q < params.fdr && lfc.abs() > params.min_abs_log2fc {
            if lfc > 0.0 {
                DeLabel::Up
            } else {
                DeLabel::Down
            }
        } else {
            DeLabel::Unchanged
        };
        result.tests.push(GeneTest {
            gene,
            u: test.u,
            p_value: test.p_value,
            q_value: q,
            log2_fold_change: lfc,
            label,
        });
    }
    result
}

//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regcast_core::engine::{accuracy, run_all, write_traces, ContextRun, EngineConfig, ScheduledSample};
use regcast_core::ensemble::{integration_seed, judge_seed, predict_score, Ensemble, EnsembleConfig};
use regcast_core::eval::{
    auroc, dominance_from, mean_from_dominance, mean_gap, relative_dominance, target_rank, SpecificityReport,
};
use regcast_core::forge::de::{label_pseudobulk_de, DeParams, PseudobulkMatrix};
use regcast_core::forge::{build_consensus, BenchmarkItem, ConditionSignature, PerturbationType};
use regcast_core::gateway::{
    AuditingBackend, BackendKind, ChatBackend, ChatRequest, ChatResponse, Gateway, GatewayError, OracleBackend,
    OracleWorld, WorldParams,
};
use regcast_core::knowledge::{Edge, KnowledgeBase, MoaTargetMap, SnapshotSource};
use regcast_core::prompts::AgentRole;
use regcast_core::scheduler::{
    order_context, schedule_by_context, score_all, sort_easy_first, DifficultyScore, OrderPolicy, ProbeParams,
};
use regcast_core::tsv::read_jsonl;
use regcast_core::{ContextId, Direction, Query};

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_regcast")
}

// ---------------------------------------------------------------- 1

fn condition(id: &str, reps: u32, genes: &[(&str, f64)]) -> ConditionSignature {
    ConditionSignature {
        condition_id: id.into(),
        cell_line: "A375".into(),
        compound: "vemurafenib".into(),
        dose_um: None,
        time_h: None,
        replicate_count: reps,
        high_quality: true,
        qc_pass: true,
        perturbation_type: PerturbationType::parse("trt_cp"),
        gene_z: genes.iter().map(|(g, z)| (g.to_string(), *z)).collect(),
    }
}

fn consensus_fixture() -> Outcome {
    let start = Instant::now();
    let table: [(&str, [f64; 3]); 6] = [
        ("A", [2.0, 4.0, 6.0]),
        ("B", [-1.0, -2.0, -3.0]),
        ("C", [1.0, -1.0, 2.0]),
        ("D", [0.0, 3.0, 3.0]),
        ("E", [-0.5, 0.5, -1.5]),
        ("F", [3.0, 0.0, 0.0]),
    ];
    let conds: Vec<_> = (0..3)
        .map(|c| {
            let genes: Vec<(&str, f64)> = table.iter().map(|(g, z)| (*g, z[c])).collect();
            condition(&format!("c{c}"), c as u32 + 1, &genes)
        })
        .collect();
    // (gene, consistency, weighted z), by hand with weights 1, 2, 3
    let want = [
        ("A", 1.0, 28.0 / 6.0),
        ("B", 1.0, -14.0 / 6.0),
        ("C", 2.0 / 3.0, 5.0 / 6.0),
        ("D", 2.0 / 3.0, 2.5),
        ("E", 2.0 / 3.0, -4.0 / 6.0),
    ];
    let kept = build_consensus(&conds, 2.0 / 3.0).map_err(|e| e.to_string())?;
    check(kept.len() == want.len(), format!("kept {} genes at 2/3, want 5", kept.len()))?;
    for (rec, (g, c, z)) in kept.iter().zip(want) {
        check(rec.gene == g, format!("gene {} where {g} expected", rec.gene))?;
        check((rec.consistency - c).abs() <= 1e-12, format!("{g} consistency {}", rec.consistency))?;
        check((rec.consensus_z - z).abs() <= 1e-12, format!("{g} z {} vs {z}", rec.consensus_z))?;
        check(rec.direction == Direction::from_z(z), format!("{g} direction"))?;
    }
    let strict: Vec<_> = build_consensus(&conds, 0.7)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|r| r.gene)
        .collect();
    check(strict == ["A", "B"], format!("threshold 0.7 kept {strict:?}"))?;

    // 7 of 10 agree: exactly on the boundary
    let ten: Vec<_> = (0..10)
        .map(|i| condition(&format!("d{i:02}"), 1, &[("G", if i < 7 { 1.0 } else { -1.0 })]))
        .collect();
    let at = build_consensus(&ten, 0.7).map_err(|e| e.to_string())?;
    check(at.len() == 1 && at[0].consistency == 0.7, "7/10 not kept at 0.7")?;
    check(build_consensus(&ten, 0.71).map_err(|e| e.to_string())?.is_empty(), "7/10 kept at 0.71")?;

    let took = start.elapsed();
    check(took < Duration::from_secs(1), format!("took {took:?}"))?;
    Ok(format!("5 genes within 1e-12, boundaries 2/3 and 7/10 inclusive, {took:.2?}"))
}

// ---------------------------------------------------------------- 2

fn brute_auroc(scored: &[(f64, bool)]) -> f64 {
    let (mut num2, mut den) = (0u64, 0u64);
    for p in scored.iter().filter(|s| s.1) {
        for n in scored.iter().filter(|s| !s.1) {
            den += 1;
            num2 += match p.0.partial_cmp(&n.0).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    num2 as f64 / (2 * den) as f64
}

fn permutation_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (n, k) = (pooled.len(), x.len());
    let u2 = |a: &[f64], b: &[f64]| -> i64 {
        a.iter()
            .flat_map(|xa| b.iter().map(move |yb| (xa, yb)))
            .map(|(xa, yb)| match xa.partial_cmp(yb).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            })
            .sum()
    };
    let centre2 = (x.len() * y.len()) as i64;
    let obs = (u2(x, y) - centre2).abs();
    let (mut total, mut extreme) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let a: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| pooled[i]).collect();
        let b: Vec<f64> = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| pooled[i]).collect();
        total += 1;
        if (u2(&a, &b) - centre2).abs() >= obs {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Every non-decreasing sequence of length `len` over 0..alphabet.
fn multisets(len: usize, alphabet: u8) -> Vec<Vec<f64>> {
    fn go(len: usize, from: u8, alphabet: u8, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for v in from..alphabet {
            cur.push(f64::from(v));
            go(len, v, alphabet, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(len, 0, alphabet, &mut Vec::new(), &mut out);
    out
}

fn rank_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut instances = 0;
    while instances < 200 {
        let n = rng.random_range(2..=12);
        let scored: Vec<(f64, bool)> = (0..n)
            .map(|_| (f64::from(rng.random_range(0u8..6)) / 5.0, rng.random_bool(0.5)))
            .collect();
        let Some(got) = auroc(&scored).map_err(|e| e.to_string())? else {
            continue;
        };
        let want = brute_auroc(&scored);
        check(got == want, format!("auroc {got} vs pairwise {want} on {scored:?}"))?;
        instances += 1;
    }

    let mut treated = BTreeMap::new();
    let mut control = BTreeMap::new();
    for nx in 2..=6 {
        for ny in 2..=(8 - nx) {
            for x in multisets(nx, 3) {
                for y in multisets(ny, 3) {
                    let gene = format!("g{}", treated.len());
                    treated.insert(gene.clone(), x.clone());
                    control.insert(gene, y);
                }
            }
        }
    }
    let counts: BTreeMap<String, f64> = treated.keys().map(|g| (g.clone(), 10.0)).collect();
    let matrix = |group: &str| PseudobulkMatrix {
        cell_line: "H358".into(),
        time_h: 24.0,
        gene_counts: counts.clone(),
        n_cells: 10,
        group: group.into(),
    };
    let result = label_pseudobulk_de(&matrix("treated"), &matrix("control"), &treated, &control, DeParams::default());
    check(result.skipped.is_empty(), "genes skipped")?;
    check(result.tests.len() == treated.len(), "missing tests")?;
    for t in &result.tests {
        let want = permutation_p(&treated[&t.gene], &control[&t.gene]);
        check(
            t.p_value == want,
            format!("{}: p {} vs enumeration {want} for {:?} / {:?}", t.gene, t.p_value, treated[&t.gene], control[&t.gene]),
        )?;
    }
    Ok(format!(
        "200 AUROC instances exact, {} Mann-Whitney splits match enumeration",
        result.tests.len()
    ))
}

// ---------------------------------------------------------------- 3

/// Reported (gap, dominance %) pairs for the two BRAF inhibitors.
const REPORTED: [(&str, f64, f64); 6] = [
    ("llama/dabrafenib", -0.110, -20.1),
    ("llama/vemurafenib", 0.029, 5.1),
    ("qwen/dabrafenib", -0.070, -45.7),
    ("qwen/vemurafenib", -0.025, -28.1),
    ("agent/dabrafenib", 0.161, 41.3),
    ("agent/vemurafenib", 0.177, 64.6),
];

fn specificity_identity(case_study_json: &Path) -> Outcome {
    for (name, gap, dom) in REPORTED {
        let mean = mean_from_dominance(gap, dom).ok_or("zero dominance")?;
        check(mean > 0.0 && mean <= 1.0, format!("{name}: implied mean {mean} is not a ratio"))?;
        let back = dominance_from(gap, mean).unwrap();
        check((back - dom).abs() <= 1e-9, format!("{name}: round trip {back}"))?;
    }
    let mean: f64 = 0.177 / 0.646;
    check((mean - 0.274).abs() < 5e-4, format!("implied mean {mean}"))?;

    // a six-line map at the reported mean (three decimals) and gap
    let m3 = (mean * 1000.0).round() / 1000.0;
    let others = [0.200, 0.220, 0.240, 0.250, 0.283];
    let mut ratios: BTreeMap<String, f64> = others.iter().enumerate().map(|(i, r)| (format!("C{i}"), *r)).collect();
    ratios.insert("A375".into(), m3 + 0.177);
    let report = SpecificityReport::new("vemurafenib", ratios.clone(), "A375").map_err(|e| e.to_string())?;
    check((report.mean_ratio - m3).abs() < 1e-12, format!("map mean {}", report.mean_ratio))?;
    check((report.mean_gap - 0.177).abs() < 1e-12, format!("map gap {}", report.mean_gap))?;
    let dom = report.relative_dominance_pct.ok_or("undefined dominance")?;
    check((dom - 64.6).abs() <= 0.5, format!("dominance {dom} vs 64.6"))?;
    check(report.target_rank == 1, "target not first")?;
    check(report.identity_residual() <= 1e-9, "identity on constructed map")?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.random_range(1..10);
        let map: BTreeMap<String, f64> = (0..n).map(|i| (format!("C{i}"), rng.random_range(0.0..1.0))).collect();
        let r = SpecificityReport::new("d", map.clone(), "C0").map_err(|e| e.to_string())?;
        check(r.identity_residual() <= 1e-9, format!("residual {}", r.identity_residual()))?;
        check(r.mean_gap == mean_gap(&map, "C0").unwrap(), "gap mismatch")?;
        check(r.relative_dominance_pct == relative_dominance(&map, "C0").unwrap(), "dominance mismatch")?;
        check(r.target_rank == target_rank(&map, "C0").unwrap(), "rank mismatch")?;
    }

    let emitted: SpecificityReport =
        serde_json::from_str(&std::fs::read_to_string(case_study_json).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    check(emitted.identity_residual() <= 1e-9, "command output breaks identity")?;
    Ok(format!(
        "6 reported rows consistent, reconstructed dominance {dom:.2}% vs 64.6%, identity holds on 1001 reports"
    ))
}

/// Three cells, hand arithmetic: ratios 3/4, 1/2, 1/4.
fn write_case_predictions(dir: &Path) -> PathBuf {
    let mut lines = Vec::new();
    let plan = [("A375", 3), ("HT29", 2), ("MCF7", 1)];
    for (cell, hits) in plan {
        for i in 0..4 {
            let truth = if i % 2 == 0 { 1 } else { 0 };
            let predicted = if i < hits { truth } else { 1 - truth };
            lines.push(format!(
                r#"{{"cell_line":"{cell}","compound":"vemurafenib","moa":"BRAF inhibitor","gene":"G{i}","score":{},"predicted_label":{predicted},"true_label":{truth},"verified":true,"run_id":0}}"#,
                if predicted == 1 { 0.8 } else { 0.2 }
            ));
        }
    }
    let path = dir.join("case_predictions.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

// ---------------------------------------------------------------- 4

const CONTEXT_OK: &str = r#"{"context_reasoning": "Driver status supports pathway engagement.", "pathway_activity": "active"}"#;
const MECHANISM_OK: &str = r#"{"mechanism_reasoning": "(drug)-(inhibits)->(BRAF)", "primary_action": "inhibition"}"#;
const NETWORK_OK: &str = r#"{"network_reasoning": "(BRAF)-(activates)->(ERK)", "edge_type": "positive_regulation"}"#;
const GARBAGE: &str = "I would rather not say.";

#[derive(Clone, Copy, PartialEq)]
enum JudgeReply {
    Pass,
    Flag,
    Broken,
}

/// Scripted verdicts for one sample, indexed [vote][attempt].
struct VerdictTable {
    malformed: Vec<Vec<bool>>,
    answers: Vec<Vec<Direction>>,
    judges: Vec<Vec<[JudgeReply; 4]>>,
}

struct TableBackend {
    by_seed: HashMap<u64, String>,
}

impl ChatBackend for TableBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let content = match AgentRole::identify(req.system_prompt()) {
            Some(AgentRole::Context) => CONTEXT_OK.to_string(),
            Some(AgentRole::Mechanism) => MECHANISM_OK.to_string(),
            Some(AgentRole::Network) => NETWORK_OK.to_string(),
            _ => self
                .by_seed
                .get(&req.seed.expect("seeded"))
                .cloned()
                .ok_or_else(|| GatewayError::Unscripted { hash: req.canonical_hash() })?,
        };
        Ok(ChatResponse {
            content,
            backend: BackendKind::Scripted,
            latency_ms: 0,
        })
    }
}

#[derive(Debug, PartialEq)]
struct VoteLaw {
    attempts: usize,
    problematic: Vec<usize>,
    chosen: Option<usize>,
    answer: Option<Direction>,
    verified: bool,
    retries: usize,
}

/// Straight-line statement of the acceptance rule.
fn reference_vote(t: &VerdictTable, v: usize, max_retries: usize, n_judges: usize) -> VoteLaw {
    let mut problematic = Vec::new();
    let mut best: Option<(usize, usize)> = None;
    for a in 0..=max_retries {
        if t.malformed[v][a] {
            problematic.push(n_judges);
            continue;
        }
        let m = t.judges[v][a][..n_judges].iter().filter(|j| **j != JudgeReply::Pass).count();
        problematic.push(m);
        if m == 0 {
            return VoteLaw {
                attempts: a + 1,
                problematic,
                chosen: Some(a),
                answer: Some(t.answers[v][a]),
                verified: true,
                retries: a,
            };
        }
        if best.is_none_or(|(bm, _)| m < bm) {
            best = Some((m, a));
        }
    }
    VoteLaw {
        attempts: max_retries + 1,
        problematic,
        chosen: best.map(|b| b.1),
        answer: best.map(|b| t.answers[v][b.1]),
        verified: false,
        retries: max_retries,
    }
}

fn judge_gate_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = Query {
        cell_line: "A375".into(),
        compound: "vemurafenib".into(),
        moa: "BRAF inhibitor".into(),
        gene: "DUSP6".into(),
    };
    let kb = Arc::new(KnowledgeBase::new(
        MoaTargetMap {
            targets: [("BRAF inhibitor".to_string(), vec!["BRAF".to_string()])].into(),
        },
        SnapshotSource::from_edges([]),
    ));
    let (mut accepted, mut exhausted, mut empty) = (0, 0, 0);
    for case in 0..1000u64 {
        let k = rng.random_range(1..=3);
        let max_retries = rng.random_range(0..=4);
        let fourth = rng.random_bool(0.5);
        let n_judges = if fourth { 4 } else { 3 };
        let flag = rng.random_range(0.05..0.6);
        let bad = rng.random_range(0.0..0.3);
        let mut t = VerdictTable {
            malformed: vec![],
            answers: vec![],
            judges: vec![],
        };
        let mut by_seed = HashMap::new();
        for v in 0..k {
            let (mut mal, mut ans, mut jud) = (vec![], vec![], vec![]);
            for a in 0..=max_retries {
                let m = rng.random_bool(bad);
                let d = if rng.random_bool(0.5) { Direction::Up } else { Direction::Down };
                let mut js = [JudgeReply::Pass; 4];
                for j in &mut js {
                    *j = if rng.random_bool(0.05) {
                        JudgeReply::Broken
                    } else if rng.random_bool(flag) {
                        JudgeReply::Flag
                    } else {
                        JudgeReply::Pass
                    };
                }
                let reply = if m {
                    GARBAGE.to_string()
                } else {
                    format!(r#"{{"reasoning": "MAPK output sets the call.", "answer": "{}"}}"#, d.as_answer())
                };
                by_seed.insert(integration_seed(case, &q, v, a), reply);
                for (i, j) in js.iter().enumerate() {
                    let reply = match j {
                        JudgeReply::Pass => r#"{"verdict": "not-problematic", "feedback": "fine"}"#,
                        JudgeReply::Flag => r#"{"verdict": "problematic", "feedback": "thin"}"#,
                        JudgeReply::Broken => GARBAGE,
                    };
                    by_seed.insert(judge_seed(case, &q, v, a, i as u8 + 1), reply.to_string());
                }
                mal.push(m);
                ans.push(d);
                jud.push(js);
            }
            t.malformed.push(mal);
            t.answers.push(ans);
            t.judges.push(jud);
        }
        let ens = Ensemble {
            gateway: Gateway::new(Arc::new(TableBackend { by_seed }), 8),
            knowledge: kb.clone(),
            prior: None,
            config: EnsembleConfig {
                k_samples: k,
                max_retries,
                fourth_judge: fourth,
                expert_retries: 0,
                root_seed: case,
            },
        };
        let p = predict_score(&q, &[], &ens).map_err(|e| format!("case {case}: {e}"))?;
        check(p.votes.len() == k, format!("case {case}: {} votes", p.votes.len()))?;
        let mut up_verified = (0, 0);
        let mut up_flagged = (0, 0);
        for (v, got) in p.votes.iter().enumerate() {
            let want = reference_vote(&t, v, max_retries, n_judges);
            let seen = VoteLaw {
                attempts: got.attempts.len(),
                problematic: got.attempts.iter().map(|a| a.problematic).collect(),
                chosen: got.chosen,
                answer: got.answer(),
                verified: got.verified,
                retries: got.retries,
            };
            check(seen == want, format!("case {case} vote {v}: got {seen:?}, want {want:?}"))?;
            match (want.verified, want.answer) {
                (true, Some(d)) => {
                    accepted += 1;
                    up_verified.0 += usize::from(d == Direction::Up);
                    up_verified.1 += 1;
                }
                (false, Some(d)) => {
                    exhausted += 1;
                    up_flagged.0 += usize::from(d == Direction::Up);
                    up_flagged.1 += 1;
                }
                (_, None) => empty += 1,
            }
        }
        let (score, verified) = if up_verified.1 > 0 {
            (up_verified.0 as f64 / up_verified.1 as f64, true)
        } else if up_flagged.1 > 0 {
            (up_flagged.0 as f64 / up_flagged.1 as f64, false)
        } else {
            (0.5, false)
        };
        check(p.score == score && p.verified == verified, format!("case {case}: score {} vs {score}", p.score))?;
    }
    Ok(format!(
        "1000 tables agree with reference ({accepted} accepted, {exhausted} exhausted, {empty} without candidate)"
    ))
}

// ---------------------------------------------------------------- 5

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin()).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "regcast {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn same_files(a: &Path, b: &Path, names: &[&str]) -> Result<(), String> {
    for n in names {
        let x = std::fs::read(a.join(n)).map_err(|e| format!("{}: {e}", a.join(n).display()))?;
        let y = std::fs::read(b.join(n)).map_err(|e| format!("{}: {e}", b.join(n).display()))?;
        check(x == y, format!("{n} differs between {} and {}", a.display(), b.display()))?;
    }
    Ok(())
}

fn cli_determinism(work: &Path) -> Outcome {
    let start = Instant::now();
    let fx = fixtures();
    let bench = work.join("bench");
    run_cli(&[
        "build-benchmark",
        "--conditions",
        s(&fx.join("conditions.tsv")),
        "--zscores",
        s(&fx.join("zscores.tsv")),
        "--compound-moa",
        s(&fx.join("compound_moa.tsv")),
        "--per-direction",
        "5",
        "--out",
        s(&bench),
    ])?;
    let golden = std::fs::read(fx.join("benchmark.golden.jsonl")).map_err(|e| e.to_string())?;
    check(
        std::fs::read(bench.join("benchmark.jsonl")).map_err(|e| e.to_string())? == golden,
        "benchmark differs from golden",
    )?;
    let benchmark = bench.join("benchmark.jsonl");
    run_cli(&["oracle-world", "--benchmark", s(&benchmark), "--out", s(&work.join("world")), "--seed", "7"])?;
    let world = work.join("world/world.json");
    let targets = fx.join("moa_targets.tsv");
    let edges = fx.join("interactions.tsv");
    let oracle = ["--backend", "oracle", "--oracle-world", s(&world), "--seed", "11"];
    let probe = work.join("probe");
    let mut args = vec!["probe", "--benchmark", s(&benchmark), "--moa-targets", s(&targets)];
    args.extend(["--interactions", s(&edges), "--out", s(&probe), "--record"]);
    args.extend(oracle);
    run_cli(&args)?;

    let run = |dir: &Path, backend: &[&str], workers: &str, record: bool| -> Result<(), String> {
        let mut args = vec!["run", "--benchmark", s(&benchmark), "--scores"];
        let scores = probe.join("scores.jsonl");
        args.push(s(&scores));
        args.extend(["--moa-targets", s(&targets), "--interactions", s(&edges), "--out", s(dir)]);
        args.extend(["--workers", workers]);
        args.extend(backend);
        if record {
            args.push("--record");
        }
        run_cli(&args)?;
        let preds = dir.join("predictions.jsonl");
        let cats = fx.join("categories.tsv");
        run_cli(&["evaluate", "--predictions", s(&preds), "--categories", s(&cats), "--out", s(dir)])
    };
    let recorded = work.join("recorded");
    run(&recorded, &oracle, "1", true)?;
    let scripts = [probe.join("script.jsonl"), recorded.join("script.jsonl")];
    let replay = ["--backend", "scripted", "--script", s(&scripts[0]), "--script", s(&scripts[1]), "--seed", "11"];
    let one = work.join("replay1");
    let four = work.join("replay4");
    run(&one, &replay, "1", false)?;
    run(&four, &replay, "4", false)?;

    let compared = ["traces.jsonl", "predictions.jsonl", "report.json", "report.txt"];
    same_files(&recorded, &one, &compared)?;
    same_files(&one, &four, &compared)?;

    let reprobe = work.join("reprobe");
    let mut args = vec!["probe", "--benchmark", s(&benchmark), "--moa-targets", s(&targets)];
    args.extend(["--interactions", s(&edges), "--out", s(&reprobe)]);
    args.extend(replay);
    run_cli(&args)?;
    same_files(&probe, &reprobe, &["scores.jsonl"])?;

    let took = start.elapsed();
    check(took < Duration::from_secs(60), format!("took {took:?}"))?;
    Ok(format!("recorded, 1-worker and 4-worker replays byte-identical, {took:.2?}"))
}

// ---------------------------------------------------------------- 6

fn fixture_knowledge() -> Result<KnowledgeBase, String> {
    let fx = fixtures();
    Ok(KnowledgeBase::new(
        MoaTargetMap::load(&fx.join("moa_targets.tsv")).map_err(|e| e.to_string())?,
        SnapshotSource::load(&fx.join("interactions.tsv")).map_err(|e| e.to_string())?,
    ))
}

fn traces_bytes(runs: &[ContextRun]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.jsonl");
    write_traces(&path, runs).unwrap();
    std::fs::read(path).unwrap()
}

fn scheduled(items: &[BenchmarkItem], scores: &[DifficultyScore], flip: bool) -> BTreeMap<ContextId, Vec<ScheduledSample>> {
    let truth: HashMap<Query, Direction> = items.iter().map(|i| (i.query(), i.label)).collect();
    schedule_by_context(scores.to_vec())
        .into_iter()
        .map(|(ctx, v)| {
            let samples = v
                .into_iter()
                .map(|s| {
                    let t = truth[&s.query];
                    ScheduledSample {
                        truth: if flip { t.flip() } else { t },
                        composite: s.composite,
                        query: s.query,
                    }
                })
                .collect();
            (ctx, samples)
        })
        .collect()
}

fn leak_and_flip() -> Outcome {
    let items: Vec<BenchmarkItem> =
        read_jsonl(&fixtures().join("benchmark.golden.jsonl")).map_err(|e| e.to_string())?;
    let kb = Arc::new(fixture_knowledge()?);
    let labelled: Vec<_> = items.iter().map(|i| (i.query(), i.label, i.consensus_z)).collect();
    let world = OracleWorld::synthesize(&labelled, &WorldParams::default());
    let audited = Arc::new(AuditingBackend::new(Arc::new(OracleBackend::new(world)?)));
    let ens = |backend: Arc<dyn ChatBackend>| Ensemble {
        gateway: Gateway::new(backend, 8),
        knowledge: kb.clone(),
        prior: None,
        config: EnsembleConfig {
            root_seed: 6,
            ..Default::default()
        },
    };
    let audit_ens = ens(audited.clone());
    let queries: Vec<Query> = items.iter().map(BenchmarkItem::query).collect();
    let params = ProbeParams { trials: 5, root_seed: 6 };
    let scores = score_all(&queries, &kb, &audit_ens.gateway, params).map_err(|e| e.to_string())?;
    let runs = run_all(scheduled(&items, &scores, false), &audit_ens, &EngineConfig::default()).map_err(|e| e.to_string())?;
    check(runs.iter().any(|r| r.traces.iter().any(|t| !t.history_genes.is_empty())), "no history used")?;

    let requests = audited.requests();
    let mut hits = Vec::new();
    for req in &requests {
        let text: String = req.messages.iter().map(|m| m.content.to_lowercase() + "\n").collect();
        for item in &items {
            let gene = item.gene.to_lowercase();
            let truth = item.label.as_answer();
            let z = format!("{:?}", item.consensus_z);
            let z3 = format!("{:.3}", item.consensus_z);
            for form in [
                format!("{gene}: {truth}"),
                format!("{gene} is {truth}"),
                format!("{gene}: label"),
                format!("{gene}: true"),
                "ground truth".to_string(),
                "true_label".to_string(),
                "consensus_z".to_string(),
                z,
                z3,
            ] {
                if text.contains(&form) {
                    hits.push(form);
                }
            }
        }
    }
    check(hits.is_empty(), format!("prompts carry labels: {:?}", &hits[..hits.len().min(5)]))?;

    // A backend blind to truth must see the same requests whatever the labels.
    let blind = |flip: bool| -> Result<(Vec<String>, Vec<u8>), String> {
        let world = OracleWorld {
            samples: vec![],
            ..OracleWorld::synthesize(&[], &WorldParams::default())
        };
        let audit = Arc::new(AuditingBackend::new(Arc::new(OracleBackend::new(world)?)));
        let runs = run_all(scheduled(&items, &scores, flip), &ens(audit.clone()), &EngineConfig::default())
            .map_err(|e| e.to_string())?;
        let mut hashes: Vec<String> = audit.requests().iter().map(ChatRequest::canonical_hash).collect();
        hashes.sort();
        Ok((hashes, traces_bytes(&runs)))
    };
    let (h0, t0) = blind(false)?;
    let (h1, t1) = blind(true)?;
    check(h0 == h1, "request stream depends on labels")?;
    check(t0 == t1, "traces depend on labels")?;
    Ok(format!(
        "{} requests free of labels; {} requests identical under label flip",
        requests.len(),
        h0.len()
    ))
}

// ---------------------------------------------------------------- 7

const CONTEXTS: usize = 25;
const PER_CONTEXT: usize = 20;

fn progressive_seed(seed: u64, workers: usize) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labelled = Vec::new();
    for c in 0..CONTEXTS {
        for g in 0..PER_CONTEXT {
            let q = Query {
                cell_line: format!("CL{c:02}"),
                compound: format!("cmpd{}", c % 5),
                moa: "BRAF inhibitor".into(),
                gene: format!("C{c:02}G{g:02}"),
            };
            let truth = if rng.random_bool(0.5) { Direction::Up } else { Direction::Down };
            labelled.push((q, truth, rng.random_range(1.0..6.0)));
        }
    }
    let world = OracleWorld::synthesize(
        &labelled,
        &WorldParams {
            rng_seed: seed,
            ..Default::default()
        },
    );
    let mut edges: Vec<Edge> = labelled.iter().map(|(q, _, _)| Edge::new(&q.gene, "BRAF", 700.0)).collect();
    for s in &world.samples {
        for a in &s.anchors {
            edges.push(Edge::new(&s.query.gene, a, 900.0));
        }
    }
    let truth: HashMap<Query, Direction> = labelled.iter().map(|(q, d, _)| (q.clone(), *d)).collect();
    let kb = Arc::new(KnowledgeBase::new(
        MoaTargetMap {
            targets: [("BRAF inhibitor".to_string(), vec!["BRAF".to_string()])].into(),
        },
        SnapshotSource::from_edges(edges),
    ));
    let ens = Ensemble {
        gateway: Gateway::new(Arc::new(OracleBackend::new(world)?), 64),
        knowledge: kb.clone(),
        prior: None,
        config: EnsembleConfig {
            root_seed: seed.wrapping_mul(7919) + 1,
            ..Default::default()
        },
    };
    let queries: Vec<Query> = labelled.iter().map(|l| l.0.clone()).collect();
    let params = ProbeParams {
        trials: 5,
        root_seed: ens.config.root_seed,
    };
    let scores = score_all(&queries, &kb, &ens.gateway, params).map_err(|e| e.to_string())?;
    let arm = |policy: OrderPolicy, history_cap: usize| -> Result<f64, String> {
        let mut by_ctx: BTreeMap<ContextId, Vec<DifficultyScore>> = BTreeMap::new();
        for s in &scores {
            by_ctx.entry(s.query.context()).or_default().push(s.clone());
        }
        let contexts = by_ctx
            .into_iter()
            .map(|(ctx, v)| {
                let samples = order_context(v, policy, ens.config.root_seed)
                    .into_iter()
                    .map(|s| ScheduledSample {
                        truth: truth[&s.query],
                        composite: s.composite,
                        query: s.query,
                    })
                    .collect();
                (ctx, samples)
            })
            .collect();
        let cfg = EngineConfig {
            history_cap,
            workers,
            ..Default::default()
        };
        Ok(accuracy(&run_all(contexts, &ens, &cfg).map_err(|e| e.to_string())?))
    };
    Ok((arm(OrderPolicy::EasyFirst, 5)?, arm(OrderPolicy::Shuffled, 0)?))
}

fn progressive_benefit() -> Outcome {
    let start = Instant::now();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let mut diffs = Vec::new();
    for seed in 0..20 {
        let (progressive, baseline) = progressive_seed(seed, workers)?;
        diffs.push(progressive - baseline);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64).sqrt();
    let took = start.elapsed();
    let detail = format!(
        "mean paired gain {mean:.4} (sd {sd:.4}) over 20 seeds of {} samples, {took:.1?}",
        CONTEXTS * PER_CONTEXT
    );
    check(mean >= 0.05, format!("gain below 0.05: {detail}"))?;
    check(took < Duration::from_secs(120), format!("too slow: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------- 8

type Transform = fn(f64) -> f64;

fn argsort_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let transforms: [(&str, Transform); 5] = [
        ("affine", |c| 2.5 * c + 0.1),
        ("cube", |c| (c - 0.5).powi(3)),
        ("exp", f64::exp),
        ("sqrt", f64::sqrt),
        ("log1p", f64::ln_1p),
    ];
    for case in 0..1000 {
        let n = rng.random_range(0..50);
        let items: Vec<(String, f64)> = (0..n)
            .map(|_| {
                let gene = format!("G{}", rng.random_range(0..30));
                (gene, f64::from(rng.random_range(0u32..=1000)) / 1000.0)
            })
            .collect();
        let order = |f: fn(f64) -> f64| -> Vec<(String, f64)> {
            let scores = items
                .iter()
                .map(|(g, c)| DifficultyScore {
                    query: Query {
                        cell_line: "A375".into(),
                        compound: "vemurafenib".into(),
                        moa: "BRAF inhibitor".into(),
                        gene: g.clone(),
                    },
                    consistency: 1.0,
                    relatedness: *c,
                    composite: f(*c),
                    trial_votes: vec![],
                })
                .collect();
            sort_easy_first(scores).into_iter().map(|s| (s.query.gene, s.relatedness)).collect()
        };
        let base = order(|c| c);
        for w in base.windows(2) {
            check(
                w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 <= w[1].0),
                format!("case {case}: not sorted at {w:?}"),
            )?;
        }
        for (name, f) in transforms {
            check(order(f) == base, format!("case {case}: {name} changes the order"))?;
        }
    }
    Ok("1000 vectors, order unchanged under 5 increasing transforms".into())
}

// ----------------------------------------------------------------

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let case_dir = work.path().join("case");
    let case_json = write_case_predictions(work.path());
    let case_study = run_cli(&[
        "case-study",
        "--predictions",
        s(&case_json),
        "--drug",
        "vemurafenib",
        "--target",
        "A375",
        "--out",
        s(&case_dir),
    ]);

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("consensus and consistency filter", Box::new(consensus_fixture)),
        ("rank statistics against brute force", Box::new(rank_statistics)),
        (
            "specificity identity",
            Box::new(move || {
                case_study.clone()?;
                specificity_identity(&case_dir.join("specificity.json"))
            }),
        ),
        ("judge gate law", Box::new(judge_gate_law)),
        ("end-to-end determinism", Box::new(|| cli_determinism(&work.path().join("det")))),
        ("no label leakage", Box::new(leak_and_flip)),
        ("progressive benefit", Box::new(progressive_benefit)),
        ("easy-first argsort invariance", Box::new(argsort_invariance)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

mod common;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use common::*;
use regcast_core::engine::{
    curate_history, load_state, run_all, run_context, state_path, write_traces, ContextRun, EngineConfig,
    EngineError, HistoryEntry, ScheduledSample,
};
use regcast_core::ensemble::{Ensemble, EnsembleConfig};
use regcast_core::gateway::oracle::OracleSample;
use regcast_core::gateway::{
    AuditingBackend, ChatBackend, ChatRequest, ChatResponse, Gateway, GatewayError, OracleBackend, OracleWorld,
    SampleDifficulty,
};
use regcast_core::prompts::AgentRole;
use regcast_core::{ContextId, Direction, Query};

fn entry(gene: &str, verified: bool) -> HistoryEntry {
    HistoryEntry {
        gene: gene.into(),
        predicted_label: Direction::Up,
        reasoning_summary: format!("{gene} reasoning"),
        composite_score_at_prediction: 0.5,
        verified,
    }
}

#[test]
fn curation_ranks_by_relatedness() {
    let kb = knowledge(&[("G1", "CUR", 900.0), ("G2", "CUR", 100.0), ("G3", "CUR", 500.0)]);
    let entries = [entry("G1", true), entry("G2", true), entry("G3", true)];
    let all = curate_history(&entries, "CUR", 5, &kb, false).unwrap();
    assert_eq!(all.len(), 3);
    let top: Vec<_> = curate_history(&entries, "CUR", 2, &kb, false)
        .unwrap()
        .into_iter()
        .map(|e| e.gene)
        .collect();
    assert_eq!(top, ["G1", "G3"]);
}

#[test]
fn curation_ties_prefer_newer_and_skip_unverified() {
    let kb = knowledge(&[]);
    let entries = [entry("A", true), entry("B", true), entry("C", true)];
    let got: Vec<_> = curate_history(&entries, "X", 2, &kb, false).unwrap().into_iter().map(|e| e.gene).collect();
    assert_eq!(got, ["C", "B"]);
    let flagged = [entry("A", false), entry("B", false)];
    assert!(curate_history(&flagged, "X", 5, &kb, false).unwrap().is_empty());
    assert_eq!(curate_history(&flagged, "X", 5, &kb, true).unwrap().len(), 2);
    assert!(curate_history(&entries, "X", 0, &kb, false).unwrap().is_empty());
}

fn ctx_query(cell: &str, gene: &str) -> Query {
    Query {
        cell_line: cell.into(),
        ..query(gene)
    }
}

fn samples(cell: &str, n: usize) -> Vec<ScheduledSample> {
    (0..n)
        .map(|i| ScheduledSample {
            query: ctx_query(cell, &format!("G{i:02}")),
            composite: 1.0 - i as f64 / n as f64,
            truth: if i % 3 == 0 { Direction::Up } else { Direction::Down },
        })
        .collect()
}

fn world(all: &[ScheduledSample]) -> OracleWorld {
    OracleWorld {
        samples: all
            .iter()
            .map(|s| OracleSample {
                query: s.query.clone(),
                truth: s.truth,
                difficulty: SampleDifficulty::Hard,
                anchors: vec![],
            })
            .collect(),
        base_accuracy_easy: 0.9,
        base_accuracy_hard: 0.7,
        context_boost: 0.2,
        judge_flag_rate: 0.2,
        malformed_rate: 0.05,
        rng_seed: 11,
    }
}

fn ensemble_over(backend: Arc<dyn ChatBackend>) -> Ensemble {
    Ensemble {
        gateway: Gateway::new(backend, 8),
        knowledge: Arc::new(knowledge(&[])),
        prior: None,
        config: EnsembleConfig {
            k_samples: 3,
            root_seed: 5,
            ..Default::default()
        },
    }
}

fn oracle(all: &[ScheduledSample]) -> Arc<OracleBackend> {
    Arc::new(OracleBackend::new(world(all)).unwrap())
}

fn traces_bytes(runs: &[ContextRun]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.jsonl");
    write_traces(&path, runs).unwrap();
    std::fs::read(path).unwrap()
}

#[test]
fn single_sample_gets_no_history() {
    let s = samples("A375", 1);
    let traces = run_context(&ContextId::new("A375", "vemurafenib"), s.clone(), &ensemble_over(oracle(&s)), &EngineConfig::default())
        .unwrap();
    assert_eq!(traces.len(), 1);
    assert!(traces[0].history_genes.is_empty());
}

#[test]
fn history_is_bounded_by_position_and_cap() {
    let s = samples("A375", 12);
    let audit = Arc::new(AuditingBackend::new(oracle(&s)));
    let cfg = EngineConfig {
        history_cap: 3,
        include_unverified: true,
        ..Default::default()
    };
    let traces = run_context(&ContextId::new("A375", "vemurafenib"), s.clone(), &ensemble_over(audit.clone()), &cfg).unwrap();
    for (i, t) in traces.iter().enumerate() {
        assert!(t.history_genes.len() <= i.min(3), "position {i}");
        assert_eq!(t.position, i);
    }
    assert_eq!(traces[2].history_genes.len(), 2);
    for req in audit.requests() {
        if AgentRole::identify(req.system_prompt()) == Some(AgentRole::Integration) {
            let lines = req.user_prompt().lines().filter(|l| l.contains(": predicted ")).count();
            assert!(lines <= 3);
        }
    }
}

#[test]
fn processing_order_is_schedule_order() {
    let mut s = samples("A375", 8);
    s.reverse();
    let traces = run_context(&ContextId::new("A375", "vemurafenib"), s.clone(), &ensemble_over(oracle(&s)), &EngineConfig::default())
        .unwrap();
    let got: Vec<_> = traces.iter().map(|t| t.gene.clone()).collect();
    let want: Vec<_> = s.iter().map(|x| x.query.gene.clone()).collect();
    assert_eq!(got, want);
}

fn two_contexts(n: usize) -> BTreeMap<ContextId, Vec<ScheduledSample>> {
    BTreeMap::from([
        (ContextId::new("A375", "vemurafenib"), samples("A375", n)),
        (ContextId::new("MCF7", "vemurafenib"), samples("MCF7", n)),
    ])
}

#[test]
fn repeated_runs_are_byte_identical_across_workers() {
    let ctxs = two_contexts(10);
    let all: Vec<_> = ctxs.values().flatten().cloned().collect();
    let ens = ensemble_over(oracle(&all));
    let one = run_all(ctxs.clone(), &ens, &EngineConfig::default()).unwrap();
    let again = run_all(ctxs.clone(), &ens, &EngineConfig::default()).unwrap();
    let four = run_all(ctxs, &ens, &EngineConfig { workers: 4, ..Default::default() }).unwrap();
    assert_eq!(traces_bytes(&one), traces_bytes(&again));
    assert_eq!(traces_bytes(&one), traces_bytes(&four));
}

#[test]
fn contexts_do_not_influence_each_other() {
    let ctxs = two_contexts(6);
    let all: Vec<_> = ctxs.values().flatten().cloned().collect();
    let ens = ensemble_over(oracle(&all));
    let both = run_all(ctxs.clone(), &ens, &EngineConfig::default()).unwrap();
    let mut only_a = ctxs;
    only_a.remove(&ContextId::new("MCF7", "vemurafenib"));
    let alone = run_all(only_a, &ens, &EngineConfig::default()).unwrap();
    assert_eq!(both[0].traces, alone[0].traces);
}

/// Fails every request once `budget` integration calls have been served.
struct Interrupting {
    inner: Arc<OracleBackend>,
    budget: usize,
    served: AtomicUsize,
}

impl ChatBackend for Interrupting {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if AgentRole::identify(req.system_prompt()) == Some(AgentRole::Integration)
            && self.served.fetch_add(1, Ordering::SeqCst) >= self.budget
        {
            return Err(GatewayError::Transport("connection reset".into()));
        }
        self.inner.complete(req)
    }
}

#[test]
fn resume_continues_without_recomputing() {
    let s = samples("A375", 10);
    let ctx = ContextId::new("A375", "vemurafenib");
    let dir = tempfile::tempdir().unwrap();
    let cfg = EngineConfig {
        state_dir: Some(dir.path().to_path_buf()),
        config_hash: "h1".into(),
        ..Default::default()
    };
    let reference = run_context(&ctx, s.clone(), &ensemble_over(oracle(&s)), &EngineConfig::default()).unwrap();

    let flaky = Arc::new(Interrupting {
        inner: oracle(&s),
        budget: 13,
        served: AtomicUsize::new(0),
    });
    let err = run_context(&ctx, s.clone(), &ensemble_over(flaky), &cfg).unwrap_err();
    assert!(matches!(err, EngineError::Sample { .. }));
    let saved = load_state(&state_path(dir.path(), &ctx)).unwrap();
    let k = saved.completed.len();
    assert!(k > 0 && k < 10, "k = {k}");
    assert_eq!(saved.completed.len() + saved.pending.len(), 10);

    let counted = Arc::new(AuditingBackend::new(oracle(&s)));
    let resumed = run_context(
        &ctx,
        s.clone(),
        &ensemble_over(counted.clone()),
        &EngineConfig { resume: true, ..cfg.clone() },
    )
    .unwrap();
    assert_eq!(resumed.len(), 10);
    assert_eq!(resumed[..k], saved.completed[..]);
    assert_eq!(resumed, reference);
    let first_gene_reasked = counted
        .requests()
        .iter()
        .any(|r| r.user_prompt().contains(&format!("will {} be", s[0].query.gene)));
    assert!(!first_gene_reasked);

    let err = run_context(
        &ctx,
        s,
        &ensemble_over(oracle(&[])),
        &EngineConfig {
            resume: true,
            config_hash: "h2".into(),
            ..cfg
        },
    )
    .unwrap_err();
    assert!(matches!(err, EngineError::ResumeMismatch { .. }));
}

#[test]
fn resume_without_state_starts_fresh() {
    let s = samples("A375", 3);
    let dir = tempfile::tempdir().unwrap();
    let cfg = EngineConfig {
        state_dir: Some(dir.path().to_path_buf()),
        resume: true,
        ..Default::default()
    };
    let traces = run_context(&ContextId::new("A375", "vemurafenib"), s.clone(), &ensemble_over(oracle(&s)), &cfg).unwrap();
    assert_eq!(traces.len(), 3);
}

#[test]
fn history_never_states_ground_truth() {
    let s = samples("A375", 9);
    let audit = Arc::new(AuditingBackend::new(oracle(&s)));
    run_context(&ContextId::new("A375", "vemurafenib"), s.clone(), &ensemble_over(audit.clone()), &EngineConfig::default())
        .unwrap();
    let leaked = Mutex::new(Vec::new());
    for req in audit.requests() {
        let text = format!("{}\n{}", req.system_prompt(), req.user_prompt()).to_lowercase();
        for x in &s {
            let gene = x.query.gene.to_lowercase();
            let truth = x.truth.as_answer();
            for form in [
                format!("{gene}: {truth}"),
                format!("{gene} is {truth}"),
                format!("{gene}: label"),
                format!("{gene}: true"),
                "ground truth".to_string(),
            ] {
                if text.contains(&form) {
                    leaked.lock().unwrap().push(form);
                }
            }
        }
    }
    assert!(leaked.lock().unwrap().is_empty());
}

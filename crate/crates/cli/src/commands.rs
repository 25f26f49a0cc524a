use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regcast_core::config::RunConfig;
use regcast_core::engine::{self, EngineConfig, ScheduledSample};
use regcast_core::ensemble::{Ensemble, PriorSource, TablePrior};
use regcast_core::eval::{case_study, evaluate, CategoryMap, EvalOptions, PredictionRecord};
use regcast_core::forge::de::{label_pseudobulk_de, DeLabel, DeParams};
use regcast_core::forge::io::{load_compound_moa, load_de_inputs, load_signatures, pairs};
use regcast_core::forge::{build_benchmark, filter_signatures, BuildParams, PairRejection, PassThrough, QualityPolicy, SelectionParams};
use regcast_core::gateway::{OracleWorld, WorldParams};
use regcast_core::scheduler::{order_context, read_scores, score_all, write_scores, DifficultyScore, OrderPolicy, ProbeParams, ScoreRecord};
use regcast_core::tsv::{read_jsonl, write_jsonl};
use regcast_core::{ContextId, Direction};

use crate::error::{write_err, CliError};
use crate::manifest::RunManifest;
use crate::setup;

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(write_err(dir))
}

fn manifest(command: &str, cfg: &RunConfig) -> RunManifest {
    RunManifest::new(command, cfg.config_hash(), setup::backend_name(cfg.gateway.backend), cfg.seed)
}

fn jsonl<T: serde::Serialize>(dir: &Path, name: &str, items: &[T], m: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(name);
    write_jsonl(&path, items).map_err(write_err(&path))?;
    m.output(name);
    Ok(())
}

fn text(dir: &Path, name: &str, body: &str, m: &mut RunManifest) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(write_err(&path))?;
    m.output(name);
    Ok(())
}

pub struct BuildArgs {
    pub conditions: PathBuf,
    pub zscores: PathBuf,
    pub compound_moa: PathBuf,
    pub out: PathBuf,
}

pub fn build(cfg: &RunConfig, a: &BuildArgs) -> Result<(), CliError> {
    prepare_out(&a.out)?;
    let mut m = manifest("build-benchmark", cfg);
    m.input("conditions", &a.conditions)
        .input("zscores", &a.zscores)
        .input("compound_moa", &a.compound_moa);

    let loaded = load_signatures(&a.conditions, &a.zscores)?;
    for d in &loaded.diagnostics {
        tracing::warn!("{}:{}: {}", d.file, d.line, d.message);
    }
    let moa_of = load_compound_moa(&a.compound_moa)?;
    let kept = filter_signatures(&loaded.signatures, &QualityPolicy::default());
    let params = BuildParams {
        threshold: cfg.forge.threshold,
        selection: SelectionParams {
            per_direction: cfg.forge.per_direction,
            min_consistent: cfg.forge.min_consistent,
        },
        test_fraction: cfg.forge.test_fraction,
        split_seed: cfg.seed,
    };
    let mut built = build_benchmark(&kept, &moa_of, &params, &PassThrough)?;

    let surviving = pairs(&kept);
    for (cell_line, compound) in pairs(&loaded.signatures).difference(&surviving) {
        built.rejected.push(PairRejection {
            cell_line: cell_line.clone(),
            compound: compound.clone(),
            reason: "no condition passed the quality filters".into(),
        });
    }
    built
        .rejected
        .sort_by(|x, y| (&x.cell_line, &x.compound).cmp(&(&y.cell_line, &y.compound)));

    jsonl(&a.out, "benchmark.jsonl", &built.items, &mut m)?;
    jsonl(&a.out, "rejected.jsonl", &built.rejected, &mut m)?;
    jsonl(&a.out, "diagnostics.jsonl", &loaded.diagnostics, &mut m)?;
    m.write(&a.out)?;

    let contexts: BTreeSet<ContextId> = built
        .items
        .iter()
        .map(|i| ContextId::new(&i.cell_line, &i.compound))
        .collect();
    println!(
        "{} items over {} pair(s); {} pair(s) rejected; {} row(s) skipped",
        built.items.len(),
        contexts.len(),
        built.rejected.len(),
        loaded.diagnostics.len()
    );
    for r in &built.rejected {
        println!("  rejected {}/{}: {}", r.cell_line, r.compound, r.reason);
    }
    Ok(())
}

pub struct WorldArgs {
    pub benchmark: PathBuf,
    pub out: PathBuf,
    pub params: WorldParams,
}

pub fn oracle_world(cfg: &RunConfig, a: &WorldArgs) -> Result<(), CliError> {
    prepare_out(&a.out)?;
    let mut m = manifest("oracle-world", cfg);
    m.input("benchmark", &a.benchmark);
    let items = setup::test_items(&a.benchmark)?;
    let labelled: Vec<_> = items.iter().map(|i| (i.query(), i.label, i.consensus_z)).collect();
    let params = WorldParams {
        rng_seed: cfg.seed,
        ..a.params
    };
    let world = OracleWorld::synthesize(&labelled, &params);
    world.validate().map_err(CliError::config)?;
    let body = serde_json::to_string_pretty(&world).expect("world serialises") + "\n";
    text(&a.out, "world.json", &body, &mut m)?;
    m.write(&a.out)?;
    println!("oracle world with {} samples", world.samples.len());
    Ok(())
}

pub struct ProbeArgs {
    pub benchmark: PathBuf,
    pub moa_targets: PathBuf,
    pub interactions: Option<PathBuf>,
    pub out: PathBuf,
    pub record: bool,
}

pub fn probe(cfg: &RunConfig, a: &ProbeArgs) -> Result<(), CliError> {
    prepare_out(&a.out)?;
    let mut m = manifest("probe", cfg);
    m.input("benchmark", &a.benchmark).input("moa_targets", &a.moa_targets);
    if let Some(p) = &a.interactions {
        m.input("interactions", p);
    }
    let items = setup::test_items(&a.benchmark)?;
    let queries: Vec<_> = items.iter().map(|i| i.query()).collect();
    let kb = setup::knowledge(cfg, &a.moa_targets, a.interactions.as_deref())?;
    let (gw, recorder) = setup::gateway(cfg, a.record)?;
    let params = ProbeParams {
        trials: cfg.scheduler.trials,
        root_seed: cfg.seed,
    };
    let scores = score_all(&queries, &kb, &gw, params)?;
    let path = a.out.join("scores.jsonl");
    write_scores(&path, &scores).map_err(write_err(&path))?;
    m.output("scores.jsonl");
    if setup::save_recording(recorder, &a.out.join("script.jsonl"))? {
        m.output("script.jsonl");
    }
    m.write(&a.out)?;
    println!("scored {} samples", scores.len());
    Ok(())
}

pub struct RunArgs {
    pub benchmark: PathBuf,
    pub scores: Option<PathBuf>,
    pub moa_targets: PathBuf,
    pub interactions: Option<PathBuf>,
    pub priors: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: bool,
    pub record: bool,
    pub run_id: u32,
}

type SampleKey = (String, String, String);

fn schedule(cfg: &RunConfig, a: &RunArgs) -> Result<BTreeMap<ContextId, Vec<ScheduledSample>>, CliError> {
    let items = setup::test_items(&a.benchmark)?;
    let scores: HashMap<SampleKey, ScoreRecord> = match &a.scores {
        Some(p) => read_scores(p)?
            .into_iter()
            .map(|r| ((r.cell_line.clone(), r.compound.clone(), r.gene.clone()), r))
            .collect(),
        None if cfg.scheduler.order == OrderPolicy::Shuffled => HashMap::new(),
        None => return Err(CliError::input("easy-first ordering needs --scores from `probe`")),
    };
    let mut truth: HashMap<SampleKey, Direction> = HashMap::new();
    let mut by_ctx: BTreeMap<ContextId, Vec<DifficultyScore>> = BTreeMap::new();
    for item in &items {
        let key = (item.cell_line.clone(), item.compound.clone(), item.gene.clone());
        let score = match scores.get(&key) {
            Some(r) => DifficultyScore {
                query: item.query(),
                consistency: r.consistency,
                relatedness: r.relatedness,
                composite: r.composite,
                trial_votes: r.votes.clone(),
            },
            None if a.scores.is_none() => DifficultyScore::new(item.query(), 0.0, 0.0, Vec::new()),
            None => {
                return Err(CliError::input(format!(
                    "no difficulty score for {}/{}/{}",
                    item.cell_line, item.compound, item.gene
                )))
            }
        };
        if truth.insert(key, item.label).is_some() {
            return Err(CliError::input(format!(
                "duplicate benchmark item {}/{}/{}",
                item.cell_line, item.compound, item.gene
            )));
        }
        by_ctx.entry(item.query().context()).or_default().push(score);
    }
    Ok(by_ctx
        .into_iter()
        .map(|(ctx, scores)| {
            let ordered = order_context(scores, cfg.scheduler.order, cfg.seed)
                .into_iter()
                .map(|s| {
                    let key = (s.query.cell_line.clone(), s.query.compound.clone(), s.query.gene.clone());
                    ScheduledSample {
                        truth: truth[&key],
                        composite: s.composite,
                        query: s.query,
                    }
                })
                .collect();
            (ctx, ordered)
        })
        .collect())
}

pub fn run(cfg: &RunConfig, a: &RunArgs) -> Result<(), CliError> {
    prepare_out(&a.out)?;
    let mut m = manifest("run", cfg);
    m.input("benchmark", &a.benchmark).input("moa_targets", &a.moa_targets);
    for (name, p) in [("scores", &a.scores), ("interactions", &a.interactions), ("priors", &a.priors)] {
        if let Some(p) = p {
            m.input(name, p);
        }
    }
    let contexts = schedule(cfg, a)?;
    let kb = setup::knowledge(cfg, &a.moa_targets, a.interactions.as_deref())?;
    let prior: Option<Arc<dyn PriorSource>> = match &a.priors {
        Some(p) => Some(Arc::new(TablePrior::load(p)?)),
        None => None,
    };
    let (gateway, recorder) = setup::gateway(cfg, a.record)?;
    let ens = Ensemble {
        gateway,
        knowledge: Arc::new(kb),
        prior,
        config: cfg.ensemble_config(),
    };
    let engine_cfg = EngineConfig {
        history_cap: cfg.engine.history_cap,
        summary_cap: cfg.engine.summary_cap,
        include_unverified: cfg.engine.include_unverified,
        workers: cfg.engine.workers,
        config_hash: cfg.config_hash(),
        state_dir: Some(a.out.join("run_state")),
        resume: a.resume,
    };
    let result = engine::run_all(contexts, &ens, &engine_cfg);
    // keep whatever was recorded even when the run fails part way
    if setup::save_recording(recorder, &a.out.join("script.jsonl"))? {
        m.output("script.jsonl");
    }
    let runs = result?;

    let traces = a.out.join("traces.jsonl");
    engine::write_traces(&traces, &runs)?;
    m.output("traces.jsonl");
    let records = engine::prediction_records(&runs, a.run_id);
    let preds = a.out.join("predictions.jsonl");
    engine::write_predictions(&preds, &records)?;
    m.output("predictions.jsonl").output("run_state");
    m.write(&a.out)?;

    let verified = records.iter().filter(|r| r.verified).count();
    println!(
        "{} samples over {} context(s); accuracy {:.3}; {} verified",
        records.len(),
        runs.len(),
        engine::accuracy(&runs),
        verified
    );
    Ok(())
}

fn read_predictions(paths: &[PathBuf]) -> Result<Vec<PredictionRecord>, CliError> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_jsonl::<PredictionRecord>(p)?);
    }
    Ok(all)
}

pub struct EvaluateArgs {
    pub predictions: Vec<PathBuf>,
    pub categories: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateArgs) -> Result<(), CliError> {
    prepare_out(&a.out)?;
    let mut m = manifest("evaluate", cfg);
    for (i, p) in a.predictions.iter().enumerate() {
        m.input(&format!("predictions.{i}"), p);
    }
    let records = read_predictions(&a.predictions)?;
    let categories = match &a.categories {
        Some(p) => {
            m.input("categories", p);
            CategoryMap::load(p)?
        }
        None => CategoryMap::default(),
    };
    let opts = EvalOptions {
        mode: cfg.eval.mode,
        accepted_only: cfg.eval.accepted_only,
    };
    let report = evaluate(&records, &categories, opts)?;
    let body = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    text(&a.out, "report.json", &body, &mut m)?;
    let table = report.render_table();
    text(&a.out, "report.txt", &table, &mut m)?;
    m.write(&a.out)?;
    print!("{table}");
    Ok(())
}

pub struct CaseStudyArgs {
    pub predictions: Vec<PathBuf>,
    pub drug: String,
    pub target: String,
    pub out: PathBuf,
}

pub fn case_study_cmd(cfg: &RunConfig, a: &CaseStudyArgs) -> Result<(), CliError> {
    prepare_out(&a.out)?;
    let mut m = manifest("case-study", cfg);
    for (i, p) in a.predictions.iter().enumerate() {
        m.input(&format!("predictions.{i}"), p);
    }
    let records = read_predictions(&a.predictions)?;
    let report = case_study(&records, &a.drug, &a.target)?;
    let residual = report.identity_residual();
    if residual > 1e-9 {
        return Err(CliError::run(format!("dominance identity off by {residual:e}")));
    }
    let body = serde_json::to_string_pretty(&report).expect("report serialises") + "\n";
    text(&a.out, "specificity.json", &body, &mut m)?;
    let table = report.render_table();
    text(&a.out, "specificity.txt", &table, &mut m)?;
    m.write(&a.out)?;
    print!("{table}");
    Ok(())
}

pub struct LabelDeArgs {
    pub pseudobulk: PathBuf,
    pub cells: PathBuf,
    pub out: PathBuf,
    pub fdr: f64,
    pub lfc: f64,
}

pub fn label_de(cfg: &RunConfig, a: &LabelDeArgs) -> Result<(), CliError> {
    if !(a.fdr > 0.0 && a.fdr <= 1.0) {
        return Err(CliError::config("--fdr must lie in (0, 1]"));
    }
    if !(a.lfc >= 0.0 && a.lfc.is_finite()) {
        return Err(CliError::config("--lfc must be finite and >= 0"));
    }
    prepare_out(&a.out)?;
    let mut m = manifest("label-de", cfg);
    m.input("pseudobulk", &a.pseudobulk).input("cells", &a.cells);
    let inputs = load_de_inputs(&a.pseudobulk, &a.cells)?;
    for d in &inputs.diagnostics {
        tracing::warn!("{}:{}: {}", d.file, d.line, d.message);
    }
    let params = DeParams {
        fdr: a.fdr,
        min_abs_log2fc: a.lfc,
        ..Default::default()
    };
    let result = label_pseudobulk_de(
        &inputs.treated,
        &inputs.control,
        &inputs.cells_treated,
        &inputs.cells_control,
        params,
    );
    let mut tsv = String::from("gene\tu\tp_value\tq_value\tlog2_fold_change\tlabel\n");
    for t in &result.tests {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}",
            t.gene,
            t.u,
            t.p_value,
            t.q_value,
            t.log2_fold_change,
            t.label.as_str()
        );
    }
    text(&a.out, "de_labels.tsv", &tsv, &mut m)?;
    let skipped: Vec<_> = result
        .skipped
        .iter()
        .map(|(gene, reason)| serde_json::json!({ "gene": gene, "reason": reason }))
        .collect();
    jsonl(&a.out, "skipped.jsonl", &skipped, &mut m)?;
    m.write(&a.out)?;
    let count = |want: DeLabel| result.tests.iter().filter(|t| t.label == want).count();
    println!(
        "{} genes tested: {} up, {} down, {} unchanged; {} skipped",
        result.tests.len(),
        count(DeLabel::Up),
        count(DeLabel::Down),
        count(DeLabel::Unchanged),
        result.skipped.len()
    );
    Ok(())
}

//! `regcast`: benchmark curation, difficulty probing, progressive runs and
//! evaluation from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 configuration, 4 input,
//! 5 provider unavailable, 6 run failure.

mod commands;
mod error;
mod manifest;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use regcast_core::config::{BackendChoice, RunConfig};
use regcast_core::eval::AggregationMode;
use regcast_core::gateway::WorldParams;
use regcast_core::scheduler::OrderPolicy;

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "regcast", version, about = "Gene-regulation direction prediction pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    backend: Option<BackendChoice>,
    /// Replay file for the scripted backend; repeatable.
    #[arg(long = "script", global = true)]
    scripts: Vec<PathBuf>,
    /// World file for the oracle backend.
    #[arg(long, global = true)]
    oracle_world: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Contexts processed in parallel.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    base_url: Option<String>,
    #[arg(long, global = true)]
    model: Option<String>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    EasyFirst,
    Shuffled,
}

#[derive(Subcommand)]
enum Command {
    /// Curate benchmark.jsonl from condition signatures.
    BuildBenchmark {
        #[arg(long)]
        conditions: PathBuf,
        #[arg(long)]
        zscores: PathBuf,
        /// TSV with columns compound, moa.
        #[arg(long)]
        compound_moa: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Minimum directional consistency.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        per_direction: Option<usize>,
        #[arg(long)]
        min_consistent: Option<usize>,
        /// Share of pairs assigned to the test split.
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Write a synthetic oracle world for a benchmark.
    OracleWorld {
        #[arg(long)]
        benchmark: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        easy_fraction: f64,
        #[arg(long, default_value_t = 0.9)]
        accuracy_easy: f64,
        #[arg(long, default_value_t = 0.7)]
        accuracy_hard: f64,
        #[arg(long, default_value_t = 0.2)]
        context_boost: f64,
        #[arg(long, default_value_t = 0.1)]
        judge_flag_rate: f64,
        #[arg(long, default_value_t = 0.02)]
        malformed_rate: f64,
    },
    /// Score every sample's difficulty (scores.jsonl).
    #[command(alias = "sort")]
    Probe {
        #[arg(long)]
        benchmark: PathBuf,
        /// TSV with columns moa, gene.
        #[arg(long)]
        moa_targets: PathBuf,
        /// Interaction snapshot (geneA, geneB, combined_score).
        #[arg(long)]
        interactions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        /// Save every reply to script.jsonl for later replay.
        #[arg(long)]
        record: bool,
    },
    /// Progressive reasoning over each context (traces.jsonl, predictions.jsonl).
    Run {
        #[arg(long)]
        benchmark: PathBuf,
        /// Output of `probe`; optional with --order shuffled.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        moa_targets: PathBuf,
        #[arg(long)]
        interactions: Option<PathBuf>,
        /// TSV of external model predictions.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from run_state/ in the output directory.
        #[arg(long)]
        resume: bool,
        /// Predict every sample without history.
        #[arg(long)]
        no_history: bool,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
        #[arg(long)]
        history_cap: Option<usize>,
        /// Offer flagged traces as history.
        #[arg(long)]
        include_unverified: bool,
        #[arg(long)]
        samples: Option<usize>,
        /// Tag written into every prediction record.
        #[arg(long, default_value_t = 0)]
        run_id: u32,
        #[arg(long)]
        record: bool,
    },
    /// Per-category AUROC and agreement (report.json, report.txt).
    Evaluate {
        /// One file per run; repeatable.
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        /// TSV with columns cell_line, category.
        #[arg(long)]
        categories: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// AUROC per perturbation, then averaged.
        #[arg(long)]
        per_perturbation: bool,
        /// Drop unverified predictions.
        #[arg(long)]
        accepted_only: bool,
    },
    /// Cell-line specificity of one drug (specificity.json, specificity.txt).
    CaseStudy {
        #[arg(long, required = true)]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        drug: String,
        /// Cell line expected to respond.
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudobulk differential-expression labels (de_labels.tsv).
    LabelDe {
        #[arg(long)]
        pseudobulk: PathBuf,
        #[arg(long)]
        cells: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        fdr: f64,
        #[arg(long, default_value_t = 0.5)]
        lfc: f64,
    },
}

fn base_config(c: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(b) = c.backend {
        cfg.gateway.backend = b;
    }
    if !c.scripts.is_empty() {
        cfg.gateway.scripts = c.scripts.clone();
    }
    if let Some(w) = &c.oracle_world {
        cfg.gateway.oracle_world = Some(w.clone());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.engine.workers = w;
    }
    if let Some(u) = &c.base_url {
        cfg.gateway.base_url = u.clone();
    }
    if let Some(m) = &c.model {
        cfg.gateway.model = m.clone();
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut cfg = base_config(&cli.common)?;
    match cli.command {
        Command::BuildBenchmark {
            conditions,
            zscores,
            compound_moa,
            out,
            threshold,
            per_direction,
            min_consistent,
            test_fraction,
        } => {
            set(&mut cfg.forge.threshold, threshold);
            set(&mut cfg.forge.per_direction, per_direction);
            set(&mut cfg.forge.min_consistent, min_consistent);
            set(&mut cfg.forge.test_fraction, test_fraction);
            cfg.validate()?;
            commands::build(
                &cfg,
                &commands::BuildArgs {
                    conditions,
                    zscores,
                    compound_moa,
                    out,
                },
            )
        }
        Command::OracleWorld {
            benchmark,
            out,
            easy_fraction,
            accuracy_easy,
            accuracy_hard,
            context_boost,
            judge_flag_rate,
            malformed_rate,
        } => {
            cfg.validate()?;
            if !(0.0..=1.0).contains(&easy_fraction) {
                return Err(CliError::config("--easy-fraction must lie in [0, 1]"));
            }
            let params = WorldParams {
                easy_fraction,
                base_accuracy_easy: accuracy_easy,
                base_accuracy_hard: accuracy_hard,
                context_boost,
                judge_flag_rate,
                malformed_rate,
                rng_seed: cfg.seed,
            };
            commands::oracle_world(&cfg, &commands::WorldArgs { benchmark, out, params })
        }
        Command::Probe {
            benchmark,
            moa_targets,
            interactions,
            out,
            trials,
            record,
        } => {
            set(&mut cfg.scheduler.trials, trials);
            cfg.validate()?;
            commands::probe(
                &cfg,
                &commands::ProbeArgs {
                    benchmark,
                    moa_targets,
                    interactions,
                    out,
                    record,
                },
            )
        }
        Command::Run {
            benchmark,
            scores,
            moa_targets,
            interactions,
            priors,
            out,
            resume,
            no_history,
            order,
            history_cap,
            include_unverified,
            samples,
            run_id,
            record,
        } => {
            set(
                &mut cfg.scheduler.order,
                order.map(|o| match o {
                    OrderArg::EasyFirst => OrderPolicy::EasyFirst,
                    OrderArg::Shuffled => OrderPolicy::Shuffled,
                }),
            );
            set(&mut cfg.engine.history_cap, history_cap);
            if no_history {
                cfg.engine.history_cap = 0;
            }
            if include_unverified {
                cfg.engine.include_unverified = true;
            }
            set(&mut cfg.ensemble.k_samples, samples);
            cfg.validate()?;
            commands::run(
                &cfg,
                &commands::RunArgs {
                    benchmark,
                    scores,
                    moa_targets,
                    interactions,
                    priors,
                    out,
                    resume,
                    record,
                    run_id,
                },
            )
        }
        Command::Evaluate {
            predictions,
            categories,
            out,
            per_perturbation,
            accepted_only,
        } => {
            if per_perturbation {
                cfg.eval.mode = AggregationMode::PerPerturbation;
            }
            if accepted_only {
                cfg.eval.accepted_only = true;
            }
            cfg.validate()?;
            commands::evaluate_cmd(
                &cfg,
                &commands::EvaluateArgs {
                    predictions,
                    categories,
                    out,
                },
            )
        }
        Command::CaseStudy {
            predictions,
            drug,
            target,
            out,
        } => {
            cfg.validate()?;
            commands::case_study_cmd(
                &cfg,
                &commands::CaseStudyArgs {
                    predictions,
                    drug,
                    target,
                    out,
                },
            )
        }
        Command::LabelDe {
            pseudobulk,
            cells,
            out,
            fdr,
            lfc,
        } => {
            cfg.validate()?;
            commands::label_de(
                &cfg,
                &commands::LabelDeArgs {
                    pseudobulk,
                    cells,
                    out,
                    fdr,
                    lfc,
                },
            )
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("regcast: {e}");
            e.exit_code()
        }
    }
}

//! Command-line driver wiring the pipeline stages: collect failures, build
//! the QSESet, run inference, evaluate, and analyze error bias.
//!
//! All stages share one content-addressed response cache, so any command
//! re-run with a warm cache performs zero backend calls and rewrites
//! byte-identical artifacts.

use std::collections::HashMap;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use epi_sql_core::bias;
use epi_sql_core::config::RunConfig;
use epi_sql_core::error::Error;
use epi_sql_core::eval::{self, Difficulty, EvalOptions};
use epi_sql_core::gateway::{Gateway, PurgeScope};
use epi_sql_core::inference::{self, InferenceOptions};
use epi_sql_core::prompt::EpigenSeed;
use epi_sql_core::qse::{self, PipelineCtx, QseBuildOptions};
use epi_sql_core::retrieval::RetrievalConfig;
use epi_sql_core::runlog::{self, RunLog};
use epi_sql_core::spider;

#[derive(Parser)]
#[command(
    name = "epi-sql",
    version,
    about = "Error-prevention-instruction pipeline for LLM Text-to-SQL"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (JSON).
    #[arg(long, short = 'c')]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Zero-shot pass over the training split; collect failing instances.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Collect, generate EPIs, verify them, and persist the QSESet.
    BuildQseset {
        #[command(flatten)]
        common: Common,
        /// Skip EPI-verification and keep every generated EPI.
        #[arg(long)]
        no_verify: bool,
    },
    /// Draft, retrieve, contextualize, and generate final SQL per dev task.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Proceed with an empty QSESet (every prediction falls back to the
        /// zero-shot draft).
        #[arg(long)]
        allow_fallback: bool,
        /// Disable EPIs entirely: plain zero-shot predictions.
        #[arg(long)]
        no_epi: bool,
        /// Override the retrieval depth from the config.
        #[arg(long)]
        k: Option<usize>,
        /// Override the similarity weights, e.g. `--weights 1,0`.
        #[arg(long, value_parser = parse_weights)]
        weights: Option<(f64, f64)>,
        /// QSESet store to read (default: <output_dir>/qseset.jsonl).
        #[arg(long)]
        qseset: Option<PathBuf>,
    },
    /// Execution-accuracy evaluation of a prediction store.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Prediction store to score (default: <output_dir>/predictions.jsonl).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Plain-text predictions, one SQL per line in split order, as an
        /// alternative to the JSON-lines store.
        #[arg(long, conflicts_with = "predictions")]
        predictions_txt: Option<PathBuf>,
        /// Database variants for test-suite accuracy (overrides the config).
        #[arg(long)]
        variants_root: Option<PathBuf>,
        /// JSON file mapping task id to difficulty, overriding the rule table.
        #[arg(long)]
        difficulty_labels: Option<PathBuf>,
    },
    /// Cluster question embeddings and report error bias per cluster and
    /// per database.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Cluster counts, overriding the config (e.g. `--ks 20,60,100`).
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        /// k-means seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Unit-normalize embeddings before clustering.
        #[arg(long)]
        normalize: bool,
        /// Drop databases with fewer samples from the per-database report;
        /// 0 reports everything.
        #[arg(long)]
        min_samples: Option<usize>,
    },
    /// Response-cache maintenance.
    Cache {
        #[command(flatten)]
        common: Common,
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Remove cached responses.
    Purge {
        /// Only entries for this model id.
        #[arg(long)]
        model: Option<String>,
    },
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (q, sql) = s.split_once(',').ok_or("expected W_QUESTION,W_SQL")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| e.to_string());
    Ok((parse(q)?, parse(sql)?))
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Collect { common } => cmd_collect(&common),
        Command::BuildQseset { common, no_verify } => cmd_build_qseset(&common, no_verify),
        Command::Infer {
            common,
            allow_fallback,
            no_epi,
            k,
            weights,
            qseset,
        } => cmd_infer(&common, allow_fallback, no_epi, k, weights, qseset),
        Command::Eval {
            common,
            predictions,
            predictions_txt,
            variants_root,
            difficulty_labels,
        } => cmd_eval(
            &common,
            predictions,
            predictions_txt,
            variants_root,
            difficulty_labels,
        ),
        Command::Analyze {
            common,
            ks,
            seed,
            normalize,
            min_samples,
        } => cmd_analyze(&common, ks, seed, normalize, min_samples),
        Command::Cache { common, action } => cmd_cache(&common, action),
    }
}

struct Stage {
    config: RunConfig,
    gateway: Gateway,
    catalog: spider::SchemaCatalog,
    seed: EpigenSeed,
}

impl Stage {
    fn open(common: &Common) -> anyhow::Result<Self> {
        let config = RunConfig::load(&common.config)?;
        std::fs::create_dir_all(&config.output_dir)
            .with_context(|| format!("creating {}", config.output_dir.display()))?;
        let gateway = config.build_gateway()?;
        let catalog = spider::load_catalog(&config.tables_path, &config.db_root)?;
        let seed = match &config.epigen_seed_path {
            Some(path) => EpigenSeed::load(path)?,
            None => EpigenSeed::builtin().clone(),
        };
        Ok(Stage {
            config,
            gateway,
            catalog,
            seed,
        })
    }

    fn ctx<'a>(&'a self, params: &'a epi_sql_core::LlmParams) -> PipelineCtx<'a> {
        PipelineCtx {
            gateway: &self.gateway,
            params,
            catalog: &self.catalog,
            seed: &self.seed,
            exec_timeout: self.config.exec_timeout(),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    fn print_gateway_stats(&self) {
        println!(
            "backend_calls={} cache_hits={}",
            self.gateway.backend_calls(),
            self.gateway.cache_hits()
        );
    }
}

fn load_split_checked(
    stage: &Stage,
    path: &std::path::Path,
) -> anyhow::Result<Vec<spider::TaskInstance>> {
    let split = spider::load_split(path)?;
    stage.catalog.validate_split(&split)?;
    Ok(split)
}

fn cmd_collect(common: &Common) -> anyhow::Result<()> {
    let stage = Stage::open(common)?;
    let split = load_split_checked(&stage, &stage.config.train_path)?;
    let params = stage.config.llm_params();
    let mut log = RunLog::create(&stage.out("collect_runlog.jsonl"))?;
    let (errors, summary) = qse::collect_errors(&split, &stage.ctx(&params), &mut log)?;
    qse::write_error_records(&errors, &stage.out("errors.jsonl"))?;
    println!(
        "collected={} skipped={} data_errors={} n={}",
        summary.collected, summary.skipped, summary.data_errors, summary.total
    );
    stage.print_gateway_stats();
    Ok(())
}

fn cmd_build_qseset(common: &Common, no_verify: bool) -> anyhow::Result<()> {
    let stage = Stage::open(common)?;
    let split = load_split_checked(&stage, &stage.config.train_path)?;
    let params = stage.config.llm_params();
    let mut log = RunLog::create(&stage.out("qseset_runlog.jsonl"))?;
    let options = QseBuildOptions {
        skip_verification: no_verify,
    };
    let summary = qse::build_qseset(
        &split,
        &stage.ctx(&params),
        &options,
        &stage.out("qseset.jsonl"),
        &mut log,
    )?;
    println!(
        "collected={} generated={} verified={} persisted={}",
        summary.collected, summary.generated, summary.verified, summary.persisted
    );
    stage.print_gateway_stats();
    Ok(())
}

fn cmd_infer(
    common: &Common,
    allow_fallback: bool,
    no_epi: bool,
    k: Option<usize>,
    weights: Option<(f64, f64)>,
    qseset_path: Option<PathBuf>,
) -> anyhow::Result<()> {
    let stage = Stage::open(common)?;
    let split = load_split_checked(&stage, &stage.config.dev_path)?;
    let params = stage.config.llm_params();

    let store_path = qseset_path.unwrap_or_else(|| stage.out("qseset.jsonl"));
    let qseset = if store_path.exists() {
        qse::load_qseset(&store_path)?
    } else if no_epi || allow_fallback {
        Vec::new()
    } else {
        return Err(Error::MissingArtifact {
            path: store_path,
            hint: "epi-sql build-qseset".into(),
        }
        .into());
    };
    if qseset.is_empty() && !(no_epi || allow_fallback) {
        bail!(
            "QSESet at {} is empty; re-run `epi-sql build-qseset` or pass --allow-fallback",
            store_path.display()
        );
    }

    let base = stage.config.retrieval_config()?;
    let retrieval = RetrievalConfig::new(
        k.unwrap_or(base.k),
        weights.map(|w| w.0).unwrap_or(base.w_question),
        weights.map(|w| w.1).unwrap_or(base.w_sql),
    )?;
    let options = InferenceOptions {
        retrieval,
        disable_epi: no_epi,
    };

    let mut log = RunLog::create(&stage.out("infer_runlog.jsonl"))?;
    let (_, summary) = inference::run_pipeline(
        &split,
        &qseset,
        &options,
        &stage.ctx(&params),
        &stage.out("predictions.jsonl"),
        &stage.out("predictions.txt"),
        &mut log,
    )?;
    println!(
        "predictions={} fallback={} errors={} n={}",
        summary.predicted, summary.fallback, summary.task_errors, summary.total
    );
    stage.print_gateway_stats();
    if summary.task_errors > 0 {
        bail!(
            "{} task(s) failed; see infer_runlog.jsonl",
            summary.task_errors
        );
    }
    Ok(())
}

fn cmd_eval(
    common: &Common,
    predictions: Option<PathBuf>,
    predictions_txt: Option<PathBuf>,
    variants_root: Option<PathBuf>,
    difficulty_labels: Option<PathBuf>,
) -> anyhow::Result<()> {
    let stage = Stage::open(common)?;
    let split = load_split_checked(&stage, &stage.config.dev_path)?;

    let pairs: Vec<(String, String)> = if let Some(txt) = predictions_txt {
        let text = std::fs::read_to_string(&txt).map_err(|e| Error::io(&txt, e))?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != split.len() {
            bail!(
                "{} lines in {} but {} tasks in the split",
                lines.len(),
                txt.display(),
                split.len()
            );
        }
        split
            .iter()
            .zip(lines)
            .map(|(task, sql)| (task.id.clone(), sql.to_string()))
            .collect()
    } else {
        let path = predictions.unwrap_or_else(|| stage.out("predictions.jsonl"));
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                hint: "epi-sql infer".into(),
            }
            .into());
        }
        inference::load_predictions(&path)?
            .into_iter()
            .map(|p| (p.task_id, p.final_sql))
            .collect()
    };

    let overrides = match difficulty_labels {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let raw: HashMap<String, String> =
                serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
            let mut labels: HashMap<String, Difficulty> = HashMap::new();
            for (id, label) in raw {
                labels.insert(id, label.parse().map_err(Error::Config)?);
            }
            Some(labels)
        }
        None => None,
    };

    let variants = variants_root.or_else(|| stage.config.variants_root.clone());
    let options = EvalOptions {
        timeout: Some(stage.config.exec_timeout()),
        difficulty_overrides: overrides,
    };
    let (report, verdicts) = eval::evaluate_split(
        &split,
        &pairs,
        &stage.catalog,
        variants.as_deref(),
        &options,
    )?;

    let mut verdict_lines = Vec::new();
    for v in &verdicts {
        serde_json::to_writer(&mut verdict_lines, v)
            .map_err(|e| Error::json(stage.out("verdicts.jsonl"), e))?;
        verdict_lines.push(b'\n');
    }
    epi_sql_core::write_atomic(&stage.out("verdicts.jsonl"), &verdict_lines)?;
    epi_sql_core::write_atomic(
        &stage.out("eval_report.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::json(stage.out("eval_report.json"), e))?
            .as_bytes(),
    )?;
    let table = eval::render_report_text(&report);
    epi_sql_core::write_atomic(&stage.out("eval_report.txt"), table.as_bytes())?;

    println!("{}", eval::summary_line(&report));
    print!("{table}");
    if report.gold_errors > 0 {
        eprintln!(
            "warning: {} task(s) excluded, gold query failed",
            report.gold_errors
        );
    }
    Ok(())
}

fn cmd_analyze(
    common: &Common,
    ks: Option<Vec<usize>>,
    seed: Option<u64>,
    normalize: bool,
    min_samples: Option<usize>,
) -> anyhow::Result<()> {
    let stage = Stage::open(common)?;
    let split = load_split_checked(&stage, &stage.config.train_path)?;

    let runlog_path = stage.out("collect_runlog.jsonl");
    if !runlog_path.exists() {
        return Err(Error::MissingArtifact {
            path: runlog_path,
            hint: "epi-sql collect".into(),
        }
        .into());
    }
    let mut outcome_by_id: HashMap<String, bool> = HashMap::new();
    for record in runlog::load_runlog(&runlog_path)? {
        if record.stage != runlog::STAGE_COLLECT {
            continue;
        }
        match record.outcome.as_str() {
            runlog::OUTCOME_CORRECT => {
                outcome_by_id.insert(record.task_id, true);
            }
            runlog::OUTCOME_ERROR => {
                outcome_by_id.insert(record.task_id, false);
            }
            _ => {}
        }
    }

    let mut vectors = Vec::new();
    let mut correct = Vec::new();
    let mut db_ids = Vec::new();
    let mut excluded = 0usize;
    for task in &split {
        match outcome_by_id.get(&task.id) {
            Some(&ok) => {
                vectors.push(stage.gateway.embed(&task.question)?.into_vec());
                correct.push(ok);
                db_ids.push(task.db_id.clone());
            }
            None => excluded += 1,
        }
    }
    if vectors.is_empty() {
        bail!("no scored instances found in {}", runlog_path.display());
    }
    if normalize || stage.config.kmeans_normalize {
        bias::unit_normalize(&mut vectors);
    }

    let seed = seed.unwrap_or(stage.config.kmeans_seed);
    let ks = ks.unwrap_or_else(|| stage.config.kmeans_ks.clone());
    for &k in &ks {
        if k == 0 || k > vectors.len() {
            eprintln!("warning: skipping k={k}, need 1 <= k <= {}", vectors.len());
            continue;
        }
        let model = bias::kmeans(&vectors, k, seed, 100, 1e-6)?;
        let report = bias::cluster_error_report(&model, &correct)?;
        bias::write_csv(&report, &stage.out(&format!("cluster_report_k{k}.csv")))?;
        bias::write_plot_data(&report, &stage.out(&format!("cluster_report_k{k}.dat")))?;
    }

    let min_samples = min_samples.unwrap_or(stage.config.min_samples);
    let db_report = bias::db_error_report(&db_ids, &correct, min_samples)?;
    bias::write_csv(&db_report, &stage.out("db_report.csv"))?;
    bias::write_plot_data(&db_report, &stage.out("db_report.dat"))?;

    println!(
        "analyzed={} excluded={} ks={:?} db_groups={}",
        vectors.len(),
        excluded,
        ks,
        db_report.groups.len()
    );
    stage.print_gateway_stats();
    Ok(())
}

fn cmd_cache(common: &Common, action: CacheAction) -> anyhow::Result<()> {
    let stage = Stage::open(common)?;
    match action {
        CacheAction::Purge { model } => {
            let scope = match model {
                Some(m) => PurgeScope::ByModel(m),
                None => PurgeScope::All,
            };
            let removed = stage.gateway.purge_cache(&scope)?;
            println!("removed={removed}");
        }
    }
    Ok(())
}

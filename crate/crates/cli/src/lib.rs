//! Subcommands of the `vcm` binary. Each one writes a [`RunManifest`]
//! into its output directory before doing any work.

pub mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use vcm_core::checkpoint::Checkpoint;
use vcm_core::data::{
    dataset_stats, default_stop_words, parse_stop_words, preprocess, read_interactions, read_reviews, DatasetStats,
    PreprocessConfig, ProcessedDataset,
};
use vcm_core::evaluator::{
    capacity_report, evaluate, mean_and_se, top_words_report, HeldOutSplit, MetricReport, PredictionMode,
};
use vcm_core::objective::TrainingVariant;
use vcm_core::trainer::{train, TrainConfig};
use vcm_core::VcmError;

pub use manifest::RunManifest;

/// Largest tolerated share of unparseable input rows.
pub const MAX_MALFORMED_FRACTION: f64 = 0.10;

#[derive(Debug, Parser)]
#[command(name = "vcm", version, about = "Coupled click/review VAE recommender")]
pub struct Cli {
    /// Worker threads for per-user work (results do not depend on this).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Log filter, e.g. `info` or `debug` (overrides RUST_LOG).
    #[arg(long, global = true)]
    pub log: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a processed dataset directory from raw ratings and reviews.
    Preprocess(PreprocessArgs),
    /// Train one variant and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Rank held-out items with a checkpoint and report Recall/NDCG.
    Evaluate(EvaluateArgs),
    /// Train every variant over a list of seeds and tabulate NDCG@10.
    Ablate(AblateArgs),
    /// Per-user capacity by activity level and top review words.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    /// `user<TAB>item<TAB>rating` lines.
    #[arg(long)]
    pub interactions: PathBuf,
    /// `user<TAB>text` lines.
    #[arg(long)]
    pub reviews: PathBuf,
    /// TOML with thresholds, vocabulary size, seed and split fractions.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// `standard` or `cross-domain`.
    #[arg(long, default_value = "standard")]
    pub mode: String,
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50, 100])]
    pub r: Vec<usize>,
    /// `validation` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Base training config; its `variant` is ignored and its `seed` is
    /// replaced by each entry of `--seeds`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Lower edges of the activity buckets (training clicks).
    #[arg(long, value_delimiter = ',', default_values_t = [5usize, 20, 40, 60, 80])]
    pub buckets: Vec<usize>,
    /// Words listed per user in the top-words report.
    #[arg(long, default_value_t = 10)]
    pub top_words: usize,
    /// `validation` or `test`, for the per-bucket NDCG@10.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

/// An input or configuration problem (exit code 1).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct InvalidInput(pub String);

/// 1 for validation problems, 2 for runtime failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<InvalidInput>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<VcmError>() {
            return match e {
                VcmError::NonFiniteGradient(_) | VcmError::NonFiniteObjective { .. } | VcmError::Io { .. } => 2,
                _ => 1,
            };
        }
    }
    2
}

pub fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(InvalidInput("--threads must be at least 1".into()).into());
    }
    // A second call (e.g. from tests running in one process) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    match &cli.command {
        Command::Preprocess(a) => cmd_preprocess(a, cli.threads),
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Evaluate(a) => cmd_evaluate(a, cli.threads),
        Command::Ablate(a) => cmd_ablate(a, cli.threads),
        Command::Diagnose(a) => cmd_diagnose(a, cli.threads),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, &text)
}

fn load_dataset(dir: &Path) -> Result<(ProcessedDataset, String)> {
    let data = ProcessedDataset::load(dir)?;
    let hash = manifest::hash_dataset_dir(dir)?;
    Ok((data, hash))
}

fn load_train_config(path: &Path) -> Result<TrainConfig> {
    TrainConfig::from_path(path).with_context(|| format!("config {}", path.display()))
}

pub fn cmd_preprocess(a: &PreprocessArgs, threads: usize) -> Result<()> {
    let config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| VcmError::io(p, e))?;
            let c: PreprocessConfig =
                toml::from_str(&text).map_err(|e| InvalidInput(format!("config {}: {}", p.display(), e.message())))?;
            c.validate()?;
            c
        }
        None => PreprocessConfig::default(),
    };
    let mut m = RunManifest::new("preprocess", json!(a), serde_json::to_value(&config)?, threads);
    m.seed = Some(config.seed);
    m.dataset_sha256 = manifest::hash_files(&[a.interactions.clone(), a.reviews.clone()])
        .map_err(|_| missing_input(&[&a.interactions, &a.reviews]))?;
    m.write(&a.out)?;

    let (interactions, ir) = read_interactions(&a.interactions)?;
    let (reviews, rr) = read_reviews(&a.reviews)?;
    for (path, report) in [(&a.interactions, ir), (&a.reviews, rr)] {
        if report.malformed > 0 {
            log::warn!(
                "{}: skipped {} of {} rows",
                path.display(),
                report.malformed,
                report.rows
            );
        }
        if report.malformed_fraction() > MAX_MALFORMED_FRACTION {
            bail!(InvalidInput(format!(
                "{}: {} of {} rows are malformed (more than {:.0}%)",
                path.display(),
                report.malformed,
                report.rows,
                MAX_MALFORMED_FRACTION * 100.0
            )));
        }
    }
    let stop_words = match &config.stop_words {
        Some(p) => parse_stop_words(&std::fs::read_to_string(p).map_err(|e| VcmError::io(p, e))?),
        None => default_stop_words(),
    };
    let (dataset, report) = preprocess(&interactions, &reviews, &config, &stop_words)?;
    dataset.save(&a.out)?;
    let stats = json!({
        "stats": report.stats,
        "sparsity_percent": format!("{:.2}%", report.stats.sparsity * 100.0),
        "vocab_size": dataset.vocab.len(),
        "positive_pairs_before_filtering": report.kept_pairs_after_binarize,
        "users_without_reviews": report.empty_review_users,
        "malformed_interaction_rows": ir.malformed,
        "malformed_review_rows": rr.malformed,
    });
    write_json(&a.out.join("stats.json"), &stats)?;
    log::info!(
        "{} users, {} items, {} interactions, sparsity {:.4}%",
        report.stats.users,
        report.stats.items,
        report.stats.interactions,
        report.stats.sparsity * 100.0
    );
    m.outputs = vec![a.out.clone()];
    m.finish(&a.out, "ok")
}

fn missing_input(paths: &[&PathBuf]) -> anyhow::Error {
    match paths.iter().find(|p| !p.is_file()) {
        Some(p) => InvalidInput(format!("cannot read input file {}", p.display())).into(),
        None => InvalidInput("cannot read input files".into()).into(),
    }
}

/// Stats of a processed dataset directory, recomputed from the click splits.
pub fn processed_stats(dataset: &ProcessedDataset) -> Result<DatasetStats> {
    let n = dataset.split.n_users();
    let rows: Vec<Vec<u32>> = (0..n)
        .map(|u| {
            let s = &dataset.split;
            [s.train.row(u), s.validation.row(u), s.test.row(u)].concat()
        })
        .collect();
    let all = vcm_core::data::ClickMatrix::new(dataset.split.n_items(), rows)?;
    Ok(dataset_stats(&all, false)?)
}

pub fn cmd_train(a: &TrainArgs, threads: usize) -> Result<()> {
    let config = load_train_config(&a.config)?;
    let mut m = RunManifest::new("train", json!(a), serde_json::to_value(&config)?, threads);
    m.seed = Some(config.seed);
    let (data, hash) = load_dataset(&a.dataset)?;
    m.dataset_sha256 = hash;
    m.outputs = [
        "checkpoint.bin",
        "history.csv",
        "timings.csv",
        "summary.json",
        "config.toml",
    ]
    .iter()
    .map(|f| a.out.join(f))
    .collect();
    m.write(&a.out)?;
    write_file(&a.out.join("config.toml"), &config.to_toml_string())?;

    let outcome = train(&config, &data.split, &data.reviews)?;
    let ck = Checkpoint::new(outcome.params, config.seed, Some(config.variant));
    let bytes = ck.to_bytes();
    std::fs::write(a.out.join("checkpoint.bin"), &bytes).context("writing checkpoint")?;
    write_file(&a.out.join("history.csv"), &outcome.history.to_csv())?;
    write_file(&a.out.join("timings.csv"), &outcome.history.timings_csv())?;
    let best = outcome.history.best_epoch.map(|e| &outcome.history.epochs[e - 1]);
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "variant": config.variant,
            "epochs_run": outcome.history.epochs.len(),
            "best_epoch": outcome.history.best_epoch,
            "best_validation_ndcg": best.and_then(|r| r.validation_ndcg),
            "eval_R": config.eval_r,
            "checkpoint_sha256": manifest::sha256_hex(&bytes),
            "aborted": outcome.aborted.as_ref().map(|e| e.to_string()),
        }),
    )?;
    match outcome.aborted {
        Some(e) => {
            m.finish(&a.out, "aborted")?;
            Err(anyhow::Error::new(e).context("training aborted; best checkpoint so far was written"))
        }
        None => m.finish(&a.out, "ok"),
    }
}

fn parse_split(s: &str) -> Result<HeldOutSplit> {
    s.parse::<HeldOutSplit>().map_err(Into::into)
}

pub fn metrics_csv(report: &MetricReport) -> String {
    let mut out = String::from("user,n_train,n_held_out");
    for r in &report.r_values {
        write!(out, ",recall@{r},ndcg@{r}").unwrap();
    }
    out.push('\n');
    for m in &report.per_user {
        write!(out, "{},{},{}", m.user, m.n_train, m.n_held_out).unwrap();
        for k in 0..report.r_values.len() {
            write!(out, ",{},{}", m.recall[k], m.ndcg[k]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn cmd_evaluate(a: &EvaluateArgs, threads: usize) -> Result<()> {
    let mode: PredictionMode = a.mode.parse()?;
    let split = parse_split(&a.split)?;
    if a.r.is_empty() || a.r.contains(&0) {
        bail!(InvalidInput("--r needs positive cutoffs".into()));
    }
    let mut m = RunManifest::new(
        "evaluate",
        json!(a),
        json!({"mode": mode, "r": a.r, "split": split}),
        threads,
    );
    let (data, hash) = load_dataset(&a.dataset)?;
    m.dataset_sha256 = hash;
    m.outputs = vec![a.out.join("per_user.csv"), a.out.join("summary.json")];
    m.write(&a.out)?;
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| VcmError::io(&a.checkpoint, e))?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    m.seed = Some(ck.header.seed);
    check_compatible(&ck, &data)?;
    let report = evaluate(&ck.params, &data.split, &data.reviews, split, mode, &a.r)?;
    write_file(&a.out.join("per_user.csv"), &metrics_csv(&report))?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "mode": mode,
            "split": split,
            "summary": report.summary,
            "evaluated_users": report.per_user.len(),
            "excluded_users": report.excluded_users,
            "checkpoint_sha256": manifest::sha256_hex(&bytes),
            "checkpoint_variant": ck.header.variant,
        }),
    )?;
    for s in &report.summary {
        log::info!(
            "R={}: recall {:.4} ± {:.4}, ndcg {:.4} ± {:.4}",
            s.r,
            s.recall_mean,
            s.recall_se,
            s.ndcg_mean,
            s.ndcg_se
        );
    }
    m.finish(&a.out, "ok")
}

fn check_compatible(ck: &Checkpoint, data: &ProcessedDataset) -> Result<()> {
    let arch = &ck.header.architecture;
    if arch.n_items != data.split.n_items() || arch.vocab_size != data.reviews.vocab_size() {
        bail!(InvalidInput(format!(
            "checkpoint expects {} items and {} words, dataset has {} and {}",
            arch.n_items,
            arch.vocab_size,
            data.split.n_items(),
            data.reviews.vocab_size()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub variant: TrainingVariant,
    pub seed: u64,
    pub ndcg10: Option<f64>,
    pub error: Option<String>,
}

pub fn cmd_ablate(a: &AblateArgs, threads: usize) -> Result<()> {
    let base = load_train_config(&a.config)?;
    let seeds = a.seeds.clone().unwrap_or_else(|| vec![base.seed]);
    if seeds.is_empty() {
        bail!(InvalidInput("--seeds is empty".into()));
    }
    let mut m = RunManifest::new("ablate", json!(a), serde_json::to_value(&base)?, threads);
    let (data, hash) = load_dataset(&a.dataset)?;
    m.dataset_sha256 = hash;
    m.outputs = vec![a.out.join("runs.csv"), a.out.join("table.csv")];
    m.write(&a.out)?;

    let mut rows = Vec::new();
    for variant in TrainingVariant::ALL {
        for &seed in &seeds {
            let config = TrainConfig {
                variant,
                seed,
                ..base.clone()
            };
            let result = train(&config, &data.split, &data.reviews).and_then(|o| match o.aborted {
                Some(e) => Err(e),
                None => evaluate(
                    &o.params,
                    &data.split,
                    &data.reviews,
                    HeldOutSplit::Test,
                    PredictionMode::Standard,
                    &[10],
                ),
            });
            let row = match result {
                Ok(r) => AblationRow {
                    variant,
                    seed,
                    ndcg10: r.ndcg_mean(10),
                    error: None,
                },
                Err(e) => {
                    log::error!("{variant} seed {seed}: {e}");
                    AblationRow {
                        variant,
                        seed,
                        ndcg10: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            log::info!("{variant} seed {seed}: NDCG@10 {:?}", row.ndcg10);
            rows.push(row);
        }
    }
    let mut runs = String::from("variant,seed,ndcg@10,error\n");
    for r in &rows {
        let nd = r.ndcg10.map(|v| v.to_string()).unwrap_or_default();
        let err = r.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
        writeln!(runs, "{},{},{nd},{err}", r.variant, r.seed).unwrap();
    }
    write_file(&a.out.join("runs.csv"), &runs)?;
    write_file(&a.out.join("table.csv"), &ablation_table(&rows))?;
    m.finish(
        &a.out,
        if rows.iter().any(|r| r.error.is_some()) {
            "partial"
        } else {
            "ok"
        },
    )
}

/// `variant,runs,failed,ndcg@10_mean,ndcg@10_se`, one row per variant.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("variant,runs,failed,ndcg@10_mean,ndcg@10_se\n");
    for variant in TrainingVariant::ALL {
        let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == variant).collect();
        let ok: Vec<f64> = mine.iter().filter_map(|r| r.ndcg10).collect();
        let (mean, se) = mean_and_se(&ok);
        let failed = mine.len() - ok.len();
        if ok.is_empty() {
            writeln!(out, "{variant},{},{failed},,", mine.len()).unwrap();
        } else {
            writeln!(out, "{variant},{},{failed},{mean},{se}", mine.len()).unwrap();
        }
    }
    out
}

pub fn cmd_diagnose(a: &DiagnoseArgs, threads: usize) -> Result<()> {
    let split = parse_split(&a.split)?;
    if a.top_words == 0 || a.buckets.is_empty() {
        bail!(InvalidInput("--top-words and --buckets must be non-empty".into()));
    }
    let mut m = RunManifest::new(
        "diagnose",
        json!(a),
        json!({"buckets": a.buckets, "top_words": a.top_words, "split": split}),
        threads,
    );
    let (data, hash) = load_dataset(&a.dataset)?;
    m.dataset_sha256 = hash;
    m.outputs = ["capacity.csv", "buckets.csv", "capacity.json", "top_words.csv"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    m.write(&a.out)?;
    let bytes = std::fs::read(&a.checkpoint).map_err(|e| VcmError::io(&a.checkpoint, e))?;
    let ck = Checkpoint::from_bytes(&bytes)?;
    m.seed = Some(ck.header.seed);
    check_compatible(&ck, &data)?;

    let report = capacity_report(&ck.params, &data.split, split, &a.buckets)?;
    let mut per_user = String::from("user,activity,capacity\n");
    for (u, (act, cap)) in report.activity.iter().zip(&report.capacity).enumerate() {
        writeln!(per_user, "{},{act},{cap}", data.users[u]).unwrap();
    }
    write_file(&a.out.join("capacity.csv"), &per_user)?;
    let mut buckets = String::from("bucket,users,mean_capacity,mean_ndcg@10\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in &report.buckets {
        writeln!(
            buckets,
            "{},{},{},{}",
            b.label(),
            b.users,
            opt(b.mean_capacity),
            opt(b.mean_ndcg10)
        )
        .unwrap();
    }
    write_file(&a.out.join("buckets.csv"), &buckets)?;
    write_json(
        &a.out.join("capacity.json"),
        &json!({
            "mean_capacity": report.mean_capacity(),
            "activity_capacity_spearman": report.activity_capacity_spearman,
            "buckets": report.buckets,
            "checkpoint_sha256": manifest::sha256_hex(&bytes),
        }),
    )?;

    let mut words = String::from("user,rank,word,probability\n");
    for u in 0..data.reviews.n_users() {
        let row = data.reviews.row(u);
        if row.is_empty() {
            continue;
        }
        for (k, (w, p)) in top_words_report(&ck.params, row, &data.vocab, a.top_words, true)?
            .iter()
            .enumerate()
        {
            writeln!(words, "{},{},{w},{p}", data.users[u], k + 1).unwrap();
        }
    }
    write_file(&a.out.join("top_words.csv"), &words)?;
    m.finish(&a.out, "ok")
}

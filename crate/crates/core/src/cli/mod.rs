//! Command-line front end: one subcommand per pipeline stage, all sharing a
//! run directory and its `manifest.json`.
//!
//! ```text
//! influence-prune --run-dir run prepare --synth-n 1000 --noise 0.25 --seed 7
//! influence-prune --run-dir run train
//! influence-prune --run-dir run influence --hvp-mode deterministic --cg-iters 50
//! influence-prune --run-dir run similarity
//! influence-prune --run-dir run sweep
//! influence-prune --run-dir run analyze
//! influence-prune --run-dir run report
//! ```

mod manifest;
mod settings;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use manifest::{sha256_file, Artifact, FileDigest, RunManifest, MANIFEST_FILE};
pub use settings::{Settings, Stage, KEYS};

use crate::analysis::{rank_agreement, RankAgreementReport};
use crate::autodiff::Curvature;
use crate::curation::{rank, sweep, write_sweep_csv, SweepConfig, SweepScores};
use crate::data::{
    length_filter, load, read_jsonl, split, synthesize, write_jsonl, Dataset, DatasetSplit,
    HashTokenizer, SplitConfig, SynthConfig,
};
use crate::error::{Error, Result};
use crate::influence::{
    gradient_similarity_matrix, influence_matrix, CgConfig, HvpMode, ScoreOptions, ScoreTable,
    Tolerance,
};
use crate::model::{
    evaluate, load_checkpoint, save_checkpoint, train, write_accuracy_csv, write_loss_curve,
    Architecture, LinearConfig, RewardModel, TrainConfig, TransformerConfig,
};

#[derive(Debug, Parser)]
#[command(name = "influence-prune", version, about = "Influence-based curation of preference data")]
pub struct Cli {
    /// Directory holding every artifact and the run manifest.
    #[arg(long, global = true, default_value = "run")]
    pub run_dir: PathBuf,
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or synthesize pairs, filter by length and split.
    Prepare(PrepareArgs),
    /// Fine-tune the reward model from a fresh checkpoint.
    Train(TrainArgs),
    /// Influence scores for every (train, validation) pair.
    Influence(InfluenceArgs),
    /// Gradient-similarity scores for every (train, validation) pair.
    Similarity(ShardArgs),
    /// Prune, retrain and evaluate across strategies and fractions.
    Sweep(SweepArgs),
    /// Rank agreement between influence and gradient similarity.
    Analyze(AnalyzeArgs),
    /// Summarize the run directory.
    Report,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// JSONL file of `{"chosen": .., "rejected": ..}` text pairs.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub synth_n: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub val_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `linear` or `transformer`.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ShardArgs {
    /// Contiguous training shards; does not change the output.
    #[arg(long, default_value_t = 1)]
    pub shards: usize,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    /// `stochastic` or `deterministic`.
    #[arg(long)]
    pub hvp_mode: Option<String>,
    #[arg(long)]
    pub cg_iters: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub hvp_batch: Option<usize>,
    #[command(flatten)]
    pub shards: ShardArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated exclusion percentages.
    #[arg(long)]
    pub fractions: Option<String>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub random_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Comma-separated k values as percentages of the training set.
    #[arg(long)]
    pub k_percents: Option<String>,
}

fn flag<T: ToString>(out: &mut Vec<(String, String)>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), v.to_string()));
    }
}

impl Command {
    fn stage(&self) -> Stage {
        match self {
            Command::Prepare(_) => Stage::Prepare,
            Command::Train(_) => Stage::Train,
            Command::Influence(_) => Stage::Influence,
            Command::Similarity(_) => Stage::Similarity,
            Command::Sweep(_) => Stage::Sweep,
            Command::Analyze(_) => Stage::Analyze,
            Command::Report => Stage::Report,
        }
    }

    fn flag_overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        match self {
            Command::Prepare(a) => {
                flag(&mut o, "input", &a.input.as_ref().map(|p| p.display().to_string()));
                flag(&mut o, "synth_n", &a.synth_n);
                flag(&mut o, "noise", &a.noise);
                flag(&mut o, "seed", &a.seed);
                flag(&mut o, "max_tokens", &a.max_tokens);
                flag(&mut o, "val_size", &a.val_size);
            }
            Command::Train(a) => {
                flag(&mut o, "arch", &a.arch);
                flag(&mut o, "lr", &a.lr);
                flag(&mut o, "epochs", &a.epochs);
                flag(&mut o, "batch_size", &a.batch_size);
                flag(&mut o, "train_seed", &a.train_seed);
            }
            Command::Influence(a) => {
                flag(&mut o, "hvp_mode", &a.hvp_mode);
                flag(&mut o, "cg_iters", &a.cg_iters);
                flag(&mut o, "damping", &a.damping);
                flag(&mut o, "hvp_batch", &a.hvp_batch);
            }
            Command::Sweep(a) => {
                flag(&mut o, "fractions", &a.fractions);
                flag(&mut o, "repeats", &a.repeats);
                flag(&mut o, "random_seed", &a.random_seed);
            }
            Command::Analyze(a) => flag(&mut o, "k_percents", &a.k_percents),
            Command::Similarity(_) | Command::Report => {}
        }
        o
    }
}

/// `1e-5` and `0.00001` name the same setting.
fn same_value(a: &str, b: &str) -> bool {
    a == b
        || matches!((a.parse::<f64>(), b.parse::<f64>()), (Ok(x), Ok(y)) if x == y)
}

/// Resolves settings for `stage`. A key owned by an earlier stage that has
/// already run cannot change without rerunning that stage.
fn resolve(cli: &Cli, manifest: &RunManifest, stage: Stage) -> Result<Settings> {
    // Earlier stages keep what they ran with; this stage and later ones
    // start again from the defaults.
    let mut s = Settings::default();
    for (k, v) in &manifest.config {
        if settings::owner(k).is_some_and(|o| o < stage) {
            s.set(k, v)?;
        }
    }
    let mut explicit = Settings::default();
    let mut touched: Vec<String> = Vec::new();
    if let Some(path) = &cli.config {
        touched = explicit.apply_file(path)?;
    }
    for a in &cli.set {
        explicit.assign(a)?;
        touched.push(a.split_once('=').map(|(k, _)| k.trim()).unwrap_or("").to_string());
    }
    for (k, v) in cli.command.flag_overrides() {
        explicit.set(&k, &v)?;
        touched.push(k);
    }
    for k in touched {
        let value = explicit.raw(&k).to_string();
        let owner = settings::owner(&k).expect("validated by Settings::set");
        if owner < stage {
            if let Some(recorded) = manifest.config.get(&k) {
                if !same_value(recorded, &value) {
                    return Err(Error::Manifest(format!(
                        "{k} was {recorded:?} when `{}` ran; rerun `{}` to change it",
                        owner.name(),
                        owner.name()
                    )));
                }
            }
        }
        s.set(&k, &value)?;
    }
    Ok(s)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::invalid(e.to_string()))?;
    run(&cli)
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::invalid("--workers must be at least 1"));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| dispatch(cli))
}

/// Entry point for the binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let _ = write!(msg, "\n  caused by: {s}");
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let dir = &cli.run_dir;
    let stage = cli.command.stage();
    let mut manifest = if stage == Stage::Prepare {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        RunManifest::new()
    } else {
        RunManifest::load(dir)?
    };
    let settings = resolve(cli, &manifest, stage)?;
    manifest.reset_from(stage);
    match &cli.command {
        Command::Prepare(_) => prepare(dir, &settings, &mut manifest)?,
        Command::Train(_) => train_stage(dir, &settings, &mut manifest)?,
        Command::Influence(a) => influence_stage(dir, &settings, &mut manifest, a.shards.shards)?,
        Command::Similarity(a) => similarity_stage(dir, &mut manifest, a.shards)?,
        Command::Sweep(_) => sweep_stage(dir, &settings, &mut manifest)?,
        Command::Analyze(_) => analyze_stage(dir, &settings, &mut manifest)?,
        Command::Report => report_stage(dir, &mut manifest)?,
    }
    manifest.record_config(settings.snapshot(stage))?;
    manifest.save(dir)
}

fn load_split(dir: &Path, manifest: &RunManifest) -> Result<DatasetSplit> {
    Ok(DatasetSplit {
        train: read_jsonl(&manifest.require(dir, "train_data")?)?,
        val: read_jsonl(&manifest.require(dir, "val_data")?)?,
        test: read_jsonl(&manifest.require(dir, "test_data")?)?,
        split_seed: manifest.seeds.get("seed").copied().unwrap_or(0),
    })
}

fn prepare(dir: &Path, s: &Settings, manifest: &mut RunManifest) -> Result<()> {
    let seed: u64 = s.get("seed")?;
    let vocab: u32 = s.get("vocab_size")?;
    let input = s.raw("input");
    let dataset = if input.is_empty() {
        let truth = RewardModel::random_linear(
            LinearConfig {
                vocab_size: vocab,
                features: s.get("truth_features")?,
            },
            seed,
        )?;
        synthesize(
            &SynthConfig {
                n: s.get("synth_n")?,
                noise_rate: s.get("noise")?,
                seed,
                min_len: s.get("synth_min_len")?,
                max_len: s.get("synth_max_len")?,
                vocab: s.get("synth_vocab")?,
            },
            &truth,
        )?
    } else {
        let path = Path::new(input);
        let ds = load(path, &HashTokenizer::new(vocab, 0))?;
        manifest.inputs.push(FileDigest {
            path: input.to_string(),
            sha256: sha256_file(path)?,
        });
        ds
    };
    let total = dataset.len();
    let filtered = length_filter(&dataset, s.get("max_tokens")?)?;
    let parts = split(
        &filtered,
        &SplitConfig {
            val_size: s.get("val_size")?,
            test_fraction: s.get("test_fraction")?,
            seed,
        },
    )?;
    for (name, file, ds) in [
        ("train_data", "train.jsonl", &parts.train),
        ("val_data", "val.jsonl", &parts.val),
        ("test_data", "test.jsonl", &parts.test),
    ] {
        write_jsonl(ds, &dir.join(file))?;
        manifest.record(dir, Stage::Prepare, name, file)?;
    }
    println!(
        "prepared {total} pairs ({} flagged), {} after length filter: train {}, val {}, test {}",
        dataset.flipped_count(),
        filtered.len(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len()
    );
    Ok(())
}

fn architecture(s: &Settings, vocab_size: u32) -> Result<Architecture> {
    match s.raw("arch") {
        "linear" => Ok(Architecture::Linear(LinearConfig {
            vocab_size,
            features: s.get("features")?,
        })),
        "transformer" => Ok(Architecture::Transformer(TransformerConfig {
            vocab_size,
            width: s.get("width")?,
            layers: s.get("layers")?,
            heads: s.get("heads")?,
            ffn_width: s.get("ffn_width")?,
            rank: s.get("rank")?,
            alpha: s.get("alpha")?,
            dropout: s.get("dropout")?,
            train_head: s.get("train_head")?,
        })),
        other => Err(Error::invalid(format!(
            "unknown architecture {other:?} (expected linear or transformer)"
        ))),
    }
}

fn train_config(s: &Settings) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: s.get("lr")?,
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        beta1: s.get("beta1")?,
        beta2: s.get("beta2")?,
        eps: s.get("adam_eps")?,
        weight_decay: s.get("weight_decay")?,
        seed: s.get("train_seed")?,
    })
}

fn train_stage(dir: &Path, s: &Settings, manifest: &mut RunManifest) -> Result<()> {
    let data = load_split(dir, manifest)?;
    let model = RewardModel::new(architecture(s, s.get("vocab_size")?)?, s.get("model_seed")?)?;
    save_checkpoint(&model, &dir.join("checkpoint_init.json"))?;
    manifest.record(dir, Stage::Train, "checkpoint_init", "checkpoint_init.json")?;

    let out = train(&model, &data.train, &train_config(s)?)?;
    save_checkpoint(&out.model, &dir.join("checkpoint.json"))?;
    write_loss_curve(&out.loss_curve, &dir.join("loss_curve.csv"))?;
    let report = evaluate(&out.model, &data.test)?;
    write_accuracy_csv(&report, &dir.join("test_accuracy.csv"))?;
    for (name, file) in [
        ("checkpoint", "checkpoint.json"),
        ("loss_curve", "loss_curve.csv"),
        ("test_accuracy", "test_accuracy.csv"),
    ] {
        manifest.record(dir, Stage::Train, name, file)?;
    }
    println!(
        "trained {} of {} parameters ({:.3}%); test accuracy {:.4} ± {:.4} (n = {})",
        out.model.num_trainable(),
        out.model.num_total(),
        100.0 * out.model.trainable_fraction(),
        report.accuracy,
        report.wald_half_width,
        report.n
    );
    Ok(())
}

fn cg_config(s: &Settings) -> Result<CgConfig> {
    let eps: f64 = s.get("tolerance")?;
    let tolerance = match s.raw("tolerance_kind") {
        "relative" => Tolerance::Relative(eps),
        "absolute" => Tolerance::Absolute(eps),
        other => {
            return Err(Error::invalid(format!(
                "tolerance_kind must be relative or absolute, got {other:?}"
            )))
        }
    };
    let cfg = CgConfig {
        damping: s.get("damping")?,
        max_iters: s.get("cg_iters")?,
        tolerance,
        batch_size: s.get("hvp_batch")?,
        hvp_mode: s.get::<HvpMode>("hvp_mode")?,
        seed: s.get("cg_seed")?,
        curvature: Curvature::Exact,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn save_table(dir: &Path, manifest: &mut RunManifest, stage: Stage, stem: &str, table: &ScoreTable) -> Result<()> {
    let (csv, json) = (format!("{stem}.csv"), format!("{stem}.json"));
    table.save(&dir.join(&csv), &dir.join(&json))?;
    manifest.record(dir, stage, &format!("{stem}_scores"), &csv)?;
    manifest.record(dir, stage, &format!("{stem}_meta"), &json)
}

fn load_table(dir: &Path, manifest: &RunManifest, stem: &str) -> Result<ScoreTable> {
    ScoreTable::load(
        &manifest.require(dir, &format!("{stem}_scores"))?,
        &manifest.require(dir, &format!("{stem}_meta"))?,
    )
}

fn influence_stage(dir: &Path, s: &Settings, manifest: &mut RunManifest, shards: usize) -> Result<()> {
    let data = load_split(dir, manifest)?;
    let model = load_checkpoint(&manifest.require(dir, "checkpoint")?)?;
    let cfg = cg_config(s)?;
    let table = influence_matrix(&model, &data, &cfg, &ScoreOptions { shards })?;
    save_table(dir, manifest, Stage::Influence, "influence", &table)?;
    let converged = table.metadata.cg_reports.iter().filter(|r| r.converged).count();
    println!(
        "influence: {} × {} scores, {converged}/{} CG solves converged, {} HVPs",
        table.train_ids().len(),
        table.val_ids().len(),
        table.val_ids().len(),
        table.metadata.hvp_applications
    );
    Ok(())
}

fn similarity_stage(dir: &Path, manifest: &mut RunManifest, shards: usize) -> Result<()> {
    let data = load_split(dir, manifest)?;
    let model = load_checkpoint(&manifest.require(dir, "checkpoint")?)?;
    let table = gradient_similarity_matrix(&model, &data, &ScoreOptions { shards })?;
    save_table(dir, manifest, Stage::Similarity, "similarity", &table)?;
    println!(
        "gradient similarity: {} × {} scores",
        table.train_ids().len(),
        table.val_ids().len()
    );
    Ok(())
}

fn sweep_stage(dir: &Path, s: &Settings, manifest: &mut RunManifest) -> Result<()> {
    let data = load_split(dir, manifest)?;
    let checkpoint_path = manifest.require(dir, "checkpoint_init")?;
    let checkpoint = load_checkpoint(&checkpoint_path)?;
    let influence = if manifest.has("influence_scores") {
        Some(load_table(dir, manifest, "influence")?)
    } else {
        None
    };
    let similarity = if manifest.has("similarity_scores") {
        Some(load_table(dir, manifest, "similarity")?)
    } else {
        None
    };
    let cfg = SweepConfig {
        fractions: s.list("fractions")?,
        random_seed: s.get("random_seed")?,
        repeats: s.get("repeats")?,
    };
    let cells = sweep(
        &checkpoint,
        &data,
        SweepScores {
            influence: influence.as_ref(),
            gradient_similarity: similarity.as_ref(),
        },
        &cfg,
        &train_config(s)?,
    )?;
    write_sweep_csv(&cells, &dir.join("sweep.csv"))?;
    manifest.record(dir, Stage::Sweep, "sweep", "sweep.csv")?;
    // The sweep must leave the original checkpoint untouched.
    manifest.require(dir, "checkpoint_init")?;
    let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
    println!("sweep: {} cells, {failed} failed", cells.len());
    Ok(())
}

fn analyze_stage(dir: &Path, s: &Settings, manifest: &mut RunManifest) -> Result<()> {
    let influence = load_table(dir, manifest, "influence")?;
    let similarity = load_table(dir, manifest, "similarity")?;
    let report = rank_agreement(&rank(&influence), &rank(&similarity), &s.list::<f64>("k_percents")?)?;
    report.write_csv(&dir.join("rank_agreement.csv"))?;
    report.write_json(&dir.join("rank_agreement.json"))?;
    manifest.record(dir, Stage::Analyze, "rank_agreement", "rank_agreement.csv")?;
    manifest.record(dir, Stage::Analyze, "rank_summary", "rank_agreement.json")?;
    println!("rank agreement: spearman {:.4}", report.spearman_rho);
    Ok(())
}

/// Share of label-flipped pairs among the first `round(10%)` of `ranking`.
fn flipped_share(train: &Dataset, ranking: &[u64]) -> Option<f64> {
    let flags: BTreeMap<u64, bool> = train
        .iter()
        .map(|p| p.noise_flag.map(|f| (p.id, f)))
        .collect::<Option<_>>()?;
    let k = crate::data::round_half_up(ranking.len() as f64 * 0.1).max(1);
    let hits = ranking[..k].iter().filter(|id| flags[id]).count();
    Some(hits as f64 / k as f64)
}

fn report_stage(dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    let data = load_split(dir, manifest)?;
    let mut out = String::new();
    let _ = writeln!(out, "# Run report\n");
    let _ = writeln!(out, "tool version: {}\n", manifest.tool_version);
    let _ = writeln!(out, "## Settings\n");
    for (k, v) in &manifest.config {
        let _ = writeln!(out, "- {k} = {v}");
    }
    let _ = writeln!(out, "\n## Data\n");
    for (name, ds) in [("train", &data.train), ("val", &data.val), ("test", &data.test)] {
        let _ = writeln!(out, "- {name}: {} pairs, {} flagged", ds.len(), ds.flipped_count());
    }
    if manifest.has("test_accuracy") {
        let text = fs::read_to_string(manifest.require(dir, "test_accuracy")?)
            .map_err(|e| Error::io("reading test accuracy", e))?;
        let _ = writeln!(out, "\n## Fine-tuned model\n\n```\n{}```", text);
    }
    for stem in ["influence", "similarity"] {
        if manifest.has(&format!("{stem}_scores")) {
            let t = load_table(dir, manifest, stem)?;
            if let Some(share) = flipped_share(&data.train, &rank(&t)) {
                let _ = writeln!(out, "\n{stem}: flipped share among top 10% most harmful = {share:.3}");
            }
        }
    }
    if manifest.has("rank_summary") {
        let bytes = fs::read(manifest.require(dir, "rank_summary")?)
            .map_err(|e| Error::io("reading rank summary", e))?;
        let r: RankAgreementReport = serde_json::from_slice(&bytes)?;
        let _ = writeln!(out, "\n## Rank agreement\n\nspearman = {:.4}\n", r.spearman_rho);
        let _ = writeln!(out, "| k | top | bottom |\n|---|---|---|");
        for p in &r.curve {
            let _ = writeln!(out, "| {} | {:.3} | {:.3} |", p.k, p.overlap_top, p.overlap_bottom);
        }
    }
    if manifest.has("sweep") {
        let mut r = csv::Reader::from_path(manifest.require(dir, "sweep")?)?;
        let _ = writeln!(out, "\n## Sweep\n\n| strategy | direction | fraction | accuracy | ± |\n|---|---|---|---|---|");
        for row in r.records() {
            let row = row?;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                &row[0], &row[1], &row[2], &row[3], &row[4]
            );
        }
    }
    fs::write(dir.join("report.md"), &out).map_err(|e| Error::io("writing report.md", e))?;
    manifest.record(dir, Stage::Report, "report", "report.md")?;
    print!("{out}");
    Ok(())
}

//! Command-line front end: `train`, `eval`, `augment`, `analyze`, `generate`
//! and `gradcheck`.
//!
//! Failures print one `error=<code> kind=<kind> message=<json string>` line on
//! stderr and exit with 1 (usage), 2 (data) or 3 (numeric).

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::augment::{build_augmentation_set, EntityGazetteer};
use crate::config::{parse_task, RunConfig};
use crate::data::DatasetFile;
use crate::error::{Error, Result};
use crate::eval::ThresholdMode;
use crate::experiment::{evaluate_checkpoint, scored_examples, train_and_evaluate, RunData};
use crate::gradcheck::{run_suite, SuiteConfig};
use crate::insight::{
    average_scores, bucketize, improvement_csv, rare_word_set, relative_improvement, BucketReport, DEFAULT_BOUNDARIES,
    DEFAULT_RARE_WORDS,
};
use crate::model::{Checkpoint, TaskKind};
use crate::synth::{generate_synthetic, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "advreg", version, about = "Adversarial regularization for toy reading-comprehension models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint and metrics log.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Add question-passage shuffle and entity replacement questions.
    Augment(AugmentArgs),
    /// Break scores down by rare-word difficulty.
    Analyze(AnalyzeArgs),
    /// Write a synthetic train/dev corpus and its gazetteer.
    Generate(GenerateArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct TrainArgs {
    /// Flat `key = value` file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["se", "seu", "mc"])]
    pub task: Option<String>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub at: bool,
    #[arg(long)]
    pub vat: bool,
    #[arg(long)]
    pub vat_unlabeled: bool,
    #[arg(long)]
    pub nel: bool,
    /// Train on the augmentation file, which must contain the training set.
    #[arg(long)]
    pub da: bool,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// File whose unanswerable questions serve as unlabeled examples.
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    #[arg(long)]
    pub augment: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long, value_parser = ["sgd", "adam"])]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Answerability threshold: a number, `search`, or the stored one by default.
    #[arg(long)]
    pub threshold: Option<String>,
    #[arg(long, default_value_t = crate::decoder::DEFAULT_MAX_ANSWER_LEN)]
    pub max_answer_len: usize,
    /// Accepted for uniformity; evaluation draws no random numbers.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for `metrics.json` and `predictions.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Tab-separated `surface<TAB>type` lines.
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long, default_value_t = 4000)]
    pub shuffle: usize,
    #[arg(long, default_value_t = 4000)]
    pub replace: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct AnalyzeArgs {
    /// Checkpoints whose per-example scores are averaged.
    #[arg(long, required = true, num_args = 1..)]
    pub checkpoint: Vec<PathBuf>,
    /// Baseline checkpoints for the relative-improvement table.
    #[arg(long, num_args = 1..)]
    pub baseline: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Dataset whose word counts define rare words; defaults to `--data`.
    #[arg(long)]
    pub rare_source: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RARE_WORDS)]
    pub rare_words: usize,
    /// Comma-separated inner bucket boundaries.
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<f64>>,
    #[arg(long, default_value_t = crate::decoder::DEFAULT_MAX_ANSWER_LEN)]
    pub max_answer_len: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for the JSON and CSV reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct GenerateArgs {
    #[arg(long, value_parser = ["se", "seu", "mc"], default_value = "seu")]
    pub task: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train_questions: Option<usize>,
    #[arg(long)]
    pub dev_questions: Option<usize>,
    #[arg(long)]
    pub facts_per_passage: Option<usize>,
    #[arg(long)]
    pub rare_fraction: Option<f64>,
    #[arg(long)]
    pub unanswerable_fraction: Option<f64>,
    #[arg(long)]
    pub label_noise: Option<f64>,
    /// Output directory for `train.json`, `dev.json` and `gazetteer.tsv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// File for the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("stdout", e))
}

impl TrainArgs {
    fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(&str, String)> = Vec::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let opts = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("task", self.task.clone()),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("xi", self.xi.map(|v| v.to_string())),
            ("train", path(&self.train)),
            ("dev", path(&self.dev)),
            ("unlabeled", path(&self.unlabeled)),
            ("augment", path(&self.augment)),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("optimizer", self.optimizer.clone()),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("hidden_dim", self.hidden_dim.map(|v| v.to_string())),
            ("out", path(&self.out)),
        ];
        for (k, v) in opts {
            if let Some(v) = v {
                e.push((k, v));
            }
        }
        for (k, on) in [("at", self.at), ("vat", self.vat), ("vat_unlabeled", self.vat_unlabeled), ("nel", self.nel), ("da", self.da)] {
            if on {
                e.push((k, "true".into()));
            }
        }
        e.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        if let Some(path) = &self.config {
            c.apply(&RunConfig::load(path)?)?;
        }
        c.apply(&self.entries())?;
        c.finish()
    }
}

/// Training set for a run: the augmentation file when `da` is on.
pub fn training_file(config: &RunConfig) -> Result<DatasetFile> {
    let path = config.train.as_ref().ok_or_else(|| Error::InvalidConfig("no training file given".into()))?;
    let train = DatasetFile::load(path)?;
    if !config.recipe.da {
        return Ok(train);
    }
    let aug_path = config.augment.as_ref().ok_or_else(|| Error::InvalidConfig("da needs an augment file".into()))?;
    let aug = DatasetFile::load(aug_path)?;
    let ids: HashSet<&str> = aug.questions().map(|(_, q)| q.id.as_str()).collect();
    if let Some((_, q)) = train.questions().find(|(_, q)| !ids.contains(q.id.as_str())) {
        return Err(Error::InvalidDataset(format!(
            "augmentation file lacks training question '{}'",
            q.id
        )));
    }
    Ok(aug)
}

fn cmd_train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let config = args.resolve()?;
    let dir = config.out.clone().ok_or_else(|| Error::InvalidConfig("no output directory given".into()))?;
    let train = training_file(&config)?;
    let dev = config.dev.as_ref().map(DatasetFile::load).transpose()?;
    let unlabeled = match (&config.unlabeled, config.recipe.vat_unlabeled) {
        (Some(p), true) => Some(DatasetFile::load(p)?),
        _ => None,
    };
    let data = RunData::prepare(config.task, &train, dev.as_ref(), unlabeled.as_ref(), config.shape.max_seq_len)?;
    out_dir(&dir)?;
    write_file(&dir.join("config.txt"), &config.to_text())?;
    let mut log = Vec::new();
    let result = train_and_evaluate(&data, &config.shape, &config.recipe, Some(&mut log))?;
    write_file(&dir.join("metrics.jsonl"), &String::from_utf8(log).expect("utf-8 log"))?;
    result.checkpoint.save(dir.join("checkpoint.json"))?;
    let epochs: Vec<_> = result
        .fit
        .epochs
        .iter()
        .map(|e| {
            json!({
                "epoch": e.epoch,
                "loss_clean": e.loss_clean,
                "loss_at": e.loss_at,
                "loss_vat": e.loss_vat,
                "loss_vat_unlabeled": e.loss_vat_unlabeled,
                "loss_nel": e.loss_nel,
                "dev": e.dev.as_ref().map(|d| &d.metrics),
            })
        })
        .collect();
    let summary = json!({
        "recipe": config.recipe.label(),
        "task": config.task.as_str(),
        "train_examples": data.train.len(),
        "best_epoch": result.fit.best_epoch,
        "dev": result.dev.as_ref().map(|d| &d.metrics),
        "threshold": result.checkpoint.na_threshold.filter(|t| t.is_finite()),
        "epochs": epochs,
    });
    write_file(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary).expect("summary") + "\n"))?;
    say(out, serde_json::to_string(&summary["dev"]).expect("metrics"))
}

fn threshold_mode(arg: &Option<String>) -> Result<Option<ThresholdMode>> {
    match arg.as_deref() {
        None => Ok(None),
        Some("search") => Ok(Some(ThresholdMode::Search)),
        Some(v) => v
            .parse()
            .map(|t| Some(ThresholdMode::Fixed(t)))
            .map_err(|_| Error::Usage(format!("--threshold expects a number or 'search', got '{v}'"))),
    }
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mode = threshold_mode(&args.threshold)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let ds = DatasetFile::load(&args.data)?;
    let (_, ev) = evaluate_checkpoint(&ckpt, &ds, mode, args.max_answer_len)?;
    let metrics = json!({
        "task": ev.task.as_str(),
        "metrics": ev.metrics,
        "threshold": ev.threshold.filter(|t| t.is_finite()),
    });
    if let Some(dir) = &args.out {
        out_dir(dir)?;
        write_file(&dir.join("metrics.json"), &(serde_json::to_string_pretty(&metrics).expect("metrics") + "\n"))?;
        write_file(&dir.join("predictions.json"), &ev.predictions_json())?;
    }
    say(out, serde_json::to_string(&metrics).expect("metrics"))
}

fn cmd_augment(args: &AugmentArgs, out: &mut dyn Write) -> Result<()> {
    let ds = DatasetFile::load(&args.data)?;
    let gaz = EntityGazetteer::load(&args.gazetteer)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let outcome = build_augmentation_set(&ds, &gaz, args.shuffle, args.replace, &mut rng)?;
    outcome.dataset.save(&args.out)?;
    say(out, serde_json::to_string(&outcome.report).expect("report"))
}

fn bucket_report(paths: &[PathBuf], ds: &DatasetFile, rare: &crate::insight::RareWordSet, boundaries: &[f64], max_answer_len: usize) -> Result<BucketReport> {
    let mut runs = Vec::with_capacity(paths.len());
    for p in paths {
        let ckpt = Checkpoint::load(p)?;
        let (encoded, ev) = evaluate_checkpoint(&ckpt, ds, None, max_answer_len)?;
        runs.push(scored_examples(&encoded, &ev, rare)?);
    }
    bucketize(&average_scores(&runs)?, boundaries)
}

fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let ds = DatasetFile::load(&args.data)?;
    let (source, source_name) = match &args.rare_source {
        Some(p) => (DatasetFile::load(p)?, p.display().to_string()),
        None => (ds.clone(), args.data.display().to_string()),
    };
    let rare = rare_word_set(&source, args.rare_words, &source_name)?;
    let boundaries = args.boundaries.clone().unwrap_or_else(|| DEFAULT_BOUNDARIES.to_vec());
    let report = bucket_report(&args.checkpoint, &ds, &rare, &boundaries, args.max_answer_len)?;
    if let Some(dir) = &args.out {
        out_dir(dir)?;
        write_file(&dir.join("buckets.json"), &report.to_json())?;
        write_file(&dir.join("buckets.csv"), &report.to_csv())?;
    }
    if !args.baseline.is_empty() {
        let base = bucket_report(&args.baseline, &ds, &rare, &boundaries, args.max_answer_len)?;
        let rows = relative_improvement(&base, &report)?;
        if let Some(dir) = &args.out {
            write_file(&dir.join("improvement.csv"), &improvement_csv(&rows))?;
        }
    }
    say(out, serde_json::to_string(&report).expect("report"))
}

fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let task = parse_task(&args.task)?;
    let d = SynthSpec::default();
    let spec = SynthSpec {
        task,
        seed: args.seed,
        train_questions: args.train_questions.unwrap_or(d.train_questions),
        dev_questions: args.dev_questions.unwrap_or(d.dev_questions),
        facts_per_passage: args.facts_per_passage.unwrap_or(d.facts_per_passage),
        rare_fraction: args.rare_fraction.unwrap_or(d.rare_fraction),
        unanswerable_fraction: match task {
            TaskKind::Seu => args.unanswerable_fraction.unwrap_or(d.unanswerable_fraction),
            _ => 0.0,
        },
        label_noise: args.label_noise.unwrap_or(d.label_noise),
        ..d
    };
    let corpus = generate_synthetic(&spec)?;
    out_dir(&args.out)?;
    corpus.train.save(args.out.join("train.json"))?;
    corpus.dev.save(args.out.join("dev.json"))?;
    write_file(&args.out.join("gazetteer.tsv"), &corpus.gazetteer.to_text())?;
    let summary = json!({
        "train": crate::data::summary(&corpus.train),
        "dev": crate::data::summary(&corpus.dev),
        "gazetteer_entries": corpus.gazetteer.len(),
    });
    say(out, serde_json::to_string(&summary).expect("summary"))
}

fn cmd_gradcheck(args: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    let report = run_suite(&SuiteConfig {
        instances: args.instances,
        seed: args.seed,
        step: args.step,
        tolerance: args.tolerance,
    })?;
    for c in &report.cases {
        let status = if c.passed { "PASS" } else { "FAIL" };
        say(out, format!("{status} {} max_relative_error={:.3e}", c.name, c.max_relative_error))?;
    }
    if let Some(path) = &args.out {
        write_file(path, &report.to_json())?;
    }
    let failed: Vec<&str> = report.failures().iter().map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::GradientCheckFailed(failed.join(",")));
    }
    say(out, format!("ok cases={} max_relative_error={:.3e}", report.cases.len(), report.max_relative_error()))
}

/// Runs a parsed command.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Augment(a) => cmd_augment(a, out),
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Generate(a) => cmd_generate(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = write!(out, "{}", e.render());
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand { 1 } else { 0 };
            }
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            let _ = writeln!(err, "{}", Error::Usage(first).to_line());
            return 1;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_line());
            e.exit_code()
        }
    }
}

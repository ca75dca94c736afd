mod manifest;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use gebd_core::data::{
    generate_synthetic_dataset, make_folds, read_annotations, read_feature_dir, BoundaryAnnotation, BoundaryClass,
    Dataset, FeatureSequence, SynthConfig, FEATURE_DIR,
};
use gebd_core::error::GebdError;
use gebd_core::eval::{evaluate_dataset, prediction_records, read_predictions, write_predictions};
use gebd_core::model::ModelConfig;
use gebd_core::trainer::{ensemble_average, ensemble_peak, train_fold_with, Checkpoint, TrainConfig};
use serde::{Deserialize, Serialize};

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "gebd", version, about = "Event boundary detection with self-similarity and contrastive learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (feature files and annotations).
    Synth(SynthArgs),
    /// Train one fold of a k-fold split.
    Train(TrainArgs),
    /// Predict boundaries with one checkpoint or an ensemble.
    Predict(PredictArgs),
    /// Score predictions against annotations.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    num_videos: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with a `synth` section.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fold: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Checkpoint path; metrics and manifest are written beside it.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    local_range: Option<usize>,
    #[arg(long)]
    peak_k: Option<usize>,
    #[arg(long, value_parser = unit_interval)]
    threshold: Option<f64>,
    /// Relative distance thresholds for validation, comma separated.
    #[arg(long, value_delimiter = ',')]
    rel: Option<Vec<f64>>,
    /// Class used for model selection.
    #[arg(long)]
    class: Option<BoundaryClass>,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint; repeat to average an ensemble.
    #[arg(long = "ckpt", required = true)]
    ckpts: Vec<PathBuf>,
    /// Dataset directory or directory of feature files.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    peak_k: Option<usize>,
    #[arg(long, value_parser = unit_interval)]
    threshold: Option<f64>,
    /// Restrict to the validation videos of this fold.
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Seed of the fold split (only with --fold).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    ann: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.05")]
    rel: Vec<f64>,
    #[arg(long, default_value = "whole")]
    class: BoundaryClass,
    /// Dataset directory; its snippet rates set the merge window used to
    /// derive whole boundaries. Without it only exact duplicates merge.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report path (default: next to the predictions).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

/// Config file layout; every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct ExperimentConfig {
    model: ModelConfig,
    train: TrainConfig,
    synth: SynthConfig,
}

struct CliError {
    code: u8,
    error: anyhow::Error,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 2, error: anyhow!(msg.into()) }
    }

    fn context(self, ctx: impl Into<String>) -> Self {
        Self { code: self.code, error: self.error.context(ctx.into()) }
    }
}

impl From<GebdError> for CliError {
    fn from(e: GebdError) -> Self {
        let code = match e {
            GebdError::Config(_) => 2,
            GebdError::Divergence { .. } => 4,
            GebdError::Shape(_) | GebdError::Input(_) | GebdError::Format { .. } | GebdError::Io(_) | GebdError::Json(_) => 3,
        };
        Self { code, error: e.into() }
    }
}

type CmdResult<T> = Result<T, CliError>;

trait Context<T> {
    fn ctx(self, msg: impl FnOnce() -> String) -> CmdResult<T>;
}

impl<T> Context<T> for Result<T, GebdError> {
    fn ctx(self, msg: impl FnOnce() -> String) -> CmdResult<T> {
        self.map_err(|e| CliError::from(e).context(msg()))
    }
}

fn load_config(path: Option<&Path>) -> CmdResult<ExperimentConfig> {
    let Some(path) = path else { return Ok(ExperimentConfig::default()) };
    if !path.is_file() {
        return Err(CliError::usage(format!("config file {} not found", path.display())));
    }
    let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("config file {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn cmd_synth(args: SynthArgs, argv: Vec<String>) -> CmdResult<()> {
    let started = Instant::now();
    let mut synth = load_config(args.config.as_deref())?.synth;
    if let Some(d) = args.dim {
        synth.dim = d;
    }
    if let Some(n) = args.noise {
        synth.noise = n;
    }
    let (videos, annotations) = generate_synthetic_dataset(args.num_videos as usize, args.seed, &synth)?;
    let data = Dataset::new(videos, annotations)?;
    let written = data.save_dir(&args.out).ctx(|| format!("writing dataset to {}", args.out.display()))?;
    eprintln!("wrote {} videos to {}", data.len(), args.out.display());
    RunManifest::new("synth", argv, to_json(&synth), Some(args.seed), &written, started)
        .write(&args.out.join("manifest.json"))
        .ctx(|| "writing manifest".into())
}

fn cmd_train(args: TrainArgs, argv: Vec<String>) -> CmdResult<()> {
    let started = Instant::now();
    if args.k < 2 {
        return Err(CliError::usage(format!("--k must be at least 2, got {}", args.k)));
    }
    if args.fold >= args.k {
        return Err(CliError::usage(format!("--fold {} out of range for --k {}", args.fold, args.k)));
    }
    let mut cfg = load_config(args.config.as_deref())?;
    let t = &mut cfg.train;
    if let Some(s) = args.seed {
        t.seed = s;
    }
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if let Some(lr) = args.lr {
        t.learning_rate = lr;
    }
    if let Some(w) = args.local_range {
        t.local_range = w;
    }
    if let Some(k) = args.peak_k {
        t.peak.k = k;
    }
    if let Some(th) = args.threshold {
        t.peak.threshold = th;
    }
    if let Some(rel) = args.rel.clone() {
        t.eval_rel_dis = rel;
    }
    if let Some(c) = args.class {
        t.selection_class = c;
    }
    cfg.train.validate()?;
    cfg.model.validate()?;

    let data = Dataset::load_dir(&args.data).ctx(|| format!("loading dataset {}", args.data.display()))?;
    let folds = make_folds(&data.ids(), args.k, cfg.train.seed)?;
    let split = &folds[args.fold];
    eprintln!("fold {}/{}: {} train, {} validation videos", args.fold, args.k, split.train_ids.len(), split.val_ids.len());
    let ckpt = train_fold_with(split, &data, &cfg.model, &cfg.train, |m| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  contrastive {:.4}  val f1 {:?}  ({:.1}s)",
            m.epoch,
            m.train_loss,
            m.contrastive_loss,
            m.val_f1,
            started.elapsed().as_secs_f64()
        );
    })?;
    ckpt.save(&args.out).ctx(|| format!("writing {}", args.out.display()))?;
    let metrics = args.out.with_extension("metrics.jsonl");
    ckpt.write_metrics_jsonl(&metrics)?;
    eprintln!("best epoch {} -> {}", ckpt.best_epoch, args.out.display());
    let resolved = serde_json::json!({
        "model": cfg.model,
        "train": cfg.train,
        "data": args.data,
        "fold": args.fold,
        "k": args.k,
    });
    RunManifest::new("train", argv, resolved, Some(cfg.train.seed), &[args.out.clone(), metrics], started)
        .write(&args.out.with_extension("manifest.json"))
        .ctx(|| "writing manifest".into())
}

fn feature_dir(data: &Path) -> PathBuf {
    let nested = data.join(FEATURE_DIR);
    if nested.is_dir() {
        nested
    } else {
        data.to_path_buf()
    }
}

fn load_features(dir: &Path) -> CmdResult<Vec<FeatureSequence>> {
    let mut videos = read_feature_dir(feature_dir(dir)).ctx(|| format!("reading features from {}", dir.display()))?;
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    Ok(videos)
}

fn cmd_predict(args: PredictArgs, argv: Vec<String>) -> CmdResult<()> {
    let started = Instant::now();
    let ckpts = args
        .ckpts
        .iter()
        .map(|p| Checkpoint::load(p).ctx(|| format!("loading checkpoint {}", p.display())))
        .collect::<CmdResult<Vec<_>>>()?;
    let in_dim = ckpts[0].in_dim;
    if let Some((p, c)) = args.ckpts.iter().zip(&ckpts).find(|(_, c)| c.in_dim != in_dim) {
        return Err(GebdError::Input(format!("{} expects D = {}, first checkpoint D = {in_dim}", p.display(), c.in_dim)).into());
    }
    let mut peak = ensemble_peak(&ckpts.iter().map(|c| c.peak).collect::<Vec<_>>())?;
    if let Some(k) = args.peak_k {
        peak.k = k;
    }
    if let Some(th) = args.threshold {
        peak.threshold = th;
    }
    peak.validate()?;

    let mut videos = load_features(&args.data)?;
    if let Some(fold) = args.fold {
        if fold >= args.k {
            return Err(CliError::usage(format!("--fold {fold} out of range for --k {}", args.k)));
        }
        let ids: Vec<String> = videos.iter().map(|v| v.video_id.clone()).collect();
        let keep = make_folds(&ids, args.k, args.seed)?.swap_remove(fold).val_ids;
        videos.retain(|v| keep.contains(&v.video_id));
    }
    let models = ckpts.iter().map(|c| c.model()).collect::<Result<Vec<_>, _>>()?;
    let mut records = Vec::with_capacity(3 * videos.len());
    for v in &videos {
        let x = v.features_f64();
        let probs = models
            .iter()
            .zip(&ckpts)
            .map(|(m, c)| m.predict(&c.params, x.view()).map(|p| p.p_final))
            .collect::<Result<Vec<_>, _>>()
            .ctx(|| format!("predicting {}", v.video_id))?;
        let views: Vec<_> = probs.iter().map(|p| p.view()).collect();
        let mean = ensemble_average(&views)?;
        records.extend(prediction_records(&v.video_id, mean.view(), v.snippet_rate, &peak));
    }
    write_predictions(&args.out, &records).ctx(|| format!("writing {}", args.out.display()))?;
    eprintln!("{} videos, {} checkpoint(s) -> {}", videos.len(), ckpts.len(), args.out.display());
    let resolved = serde_json::json!({
        "checkpoints": args.ckpts,
        "data": args.data,
        "peak": peak,
        "fold": args.fold,
        "k": args.k,
    });
    RunManifest::new("predict", argv, resolved, Some(args.seed), std::slice::from_ref(&args.out), started)
        .write(&args.out.with_extension("manifest.json"))
        .ctx(|| "writing manifest".into())
}

fn cmd_eval(args: EvalArgs, argv: Vec<String>) -> CmdResult<()> {
    let started = Instant::now();
    if args.rel.is_empty() || args.rel.iter().any(|r| r.is_nan() || *r <= 0.0) {
        return Err(CliError::usage(format!("--rel values must be positive, got {:?}", args.rel)));
    }
    let predictions = read_predictions(&args.pred).ctx(|| format!("parsing {}", args.pred.display()))?;
    let records = read_annotations(&args.ann).ctx(|| format!("parsing {}", args.ann.display()))?;
    let rates: HashMap<String, f64> = match &args.data {
        Some(dir) => load_features(dir)?.into_iter().map(|v| (v.video_id, v.snippet_rate)).collect(),
        None => HashMap::new(),
    };
    let annotations = records
        .into_iter()
        .map(|r| {
            let window = rates.get(&r.video_id).map_or(0.0, |rate| 1.0 / rate);
            r.into_annotation(window)
        })
        .collect::<Result<Vec<BoundaryAnnotation>, _>>()
        .ctx(|| format!("reading {}", args.ann.display()))?;
    let report = evaluate_dataset(&predictions, &annotations, &args.rel, args.class)?;
    print!("{}", report.render_table());
    let out = args.out.clone().unwrap_or_else(|| args.pred.with_extension("report.json"));
    let json = serde_json::to_vec_pretty(&report).map_err(GebdError::from)?;
    manifest::write_atomic(&out, &json).ctx(|| format!("writing {}", out.display()))?;
    let resolved = serde_json::json!({
        "pred": args.pred,
        "ann": args.ann,
        "rel": args.rel,
        "class": args.class,
        "data": args.data,
    });
    RunManifest::new("eval", argv, resolved, None, std::slice::from_ref(&out), started)
        .write(&out.with_extension("manifest.json"))
        .ctx(|| "writing manifest".into())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::Predict(a) => cmd_predict(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}

//! Command-line interface: synthetic data generation, training,
//! evaluation, prediction, feature export, and self-verification.
//!
//! Configuration comes from an optional JSON file plus flags; flags win.
//! Every run logs its fully resolved configuration and seed to stderr.
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint;
use crate::data::{load_dataset, root_center, save_dataset, PoseSample};
use crate::error::{Error, Result};
use crate::features::{extract_features, write_features_csv};
use crate::metrics::{evaluate, EvalOptions, EvalReport};
use crate::rng::{stream, Stream};
use crate::selfcheck;
use crate::skeleton::{JointSet, Skeleton};
use crate::synth::{strip_labels, synth_dataset, SynthConfig};
use crate::trainer::{
    train, write_log_csv, ReencodeSource, TrainConfig, TrainMode, TrainStatus,
};

#[derive(Parser)]
#[command(
    name = "poselift",
    version,
    about = "Lift 2D human poses to 3D with a shared 2D/3D latent body representation"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

// One instance per process; boxing the large train variant buys nothing.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic pose dataset (JSONL).
    Synth(SynthArgs),
    /// Train a lifting model and write a checkpoint plus a CSV loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled dataset.
    Eval(EvalArgs),
    /// Predict 3D poses (mm, root-relative) for a 2D dataset.
    Predict(PredictArgs),
    /// Export latent features as CSV for external plotting.
    ExportFeatures(ExportFeaturesArgs),
    /// Run the built-in verification battery.
    Selfcheck,
}

#[derive(Args)]
struct SynthArgs {
    /// Builtin skeleton (h36m16, h36m17) or a path to a skeleton JSON file.
    #[arg(long, default_value = "h36m16")]
    skeleton: String,
    /// Number of samples.
    #[arg(long)]
    count: usize,
    /// RNG seed (default: POSELIFT_SEED or 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Drop the 3D poses (produce an unlabeled set).
    #[arg(long)]
    strip_labels: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Training mode; overrides the config file.
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    /// Labeled training dataset (JSONL).
    #[arg(long)]
    labeled: PathBuf,
    /// Unlabeled dataset (required for --mode semi).
    #[arg(long)]
    unlabeled: Option<PathBuf>,
    /// Labeled validation dataset.
    #[arg(long)]
    val: PathBuf,
    /// JSON file with a training configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Where to write the trained checkpoint.
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Where to write the per-step CSV loss log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Root joint index used to center 3D poses on load.
    #[arg(long, default_value_t = 0)]
    root: usize,

    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// RNG seed (default: config file, then POSELIFT_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Latent feature width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Discriminator updates per main step (semi mode).
    #[arg(long)]
    disc_ratio: Option<usize>,
    /// Per-epoch learning-rate decay factor; 1.0 disables.
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Early-stop patience in validations.
    #[arg(long)]
    patience: Option<usize>,
    /// Keep re-encoding gradients out of the 3D encoder (semi mode).
    #[arg(long)]
    detach_reencoder: bool,
    /// Re-encode the generator's prediction or the decoder's output.
    #[arg(long, value_enum)]
    reencode_source: Option<CliReencode>,

    /// Estimation-loss weight λ₁.
    #[arg(long)]
    lambda_est: Option<f64>,
    /// Labeled perceptual-loss weight λ₂.
    #[arg(long)]
    lambda_perc: Option<f64>,
    /// Reconstruction-loss weight λ₃.
    #[arg(long)]
    lambda_rec: Option<f64>,
    /// Unlabeled adversarial weight λ₄.
    #[arg(long)]
    lambda_adv: Option<f64>,
    /// Unlabeled perceptual weight λ₅.
    #[arg(long)]
    lambda_perc_ul: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled dataset to score.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = Protocol::All)]
    protocol: Protocol,
    /// Print per-action rows.
    #[arg(long)]
    per_action: bool,
    /// Write the full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root joint index.
    #[arg(long, default_value_t = 0)]
    root: usize,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Input dataset; only the 2D poses are read.
    #[arg(long)]
    data: PathBuf,
    /// Output JSONL of predicted poses.
    #[arg(long)]
    out: PathBuf,
    /// Root joint index.
    #[arg(long, default_value_t = 0)]
    root: usize,
}

#[derive(Args)]
struct ExportFeaturesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled dataset to encode.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also export the re-encoded predicted pose's feature.
    #[arg(long)]
    include_reencoded: bool,
    /// Root joint index.
    #[arg(long, default_value_t = 0)]
    root: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Supervised,
    Semi,
    Baseline,
}

impl From<CliMode> for TrainMode {
    fn from(m: CliMode) -> Self {
        match m {
            CliMode::Supervised => TrainMode::Supervised,
            CliMode::Semi => TrainMode::Semi,
            CliMode::Baseline => TrainMode::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliReencode {
    Generator,
    Decoder,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Protocol {
    P1,
    P2,
    Pck,
    Auc,
    All,
}

/// Parse the process arguments, run the selected command, and return the
/// process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            1
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::ExportFeatures(args) => cmd_export_features(args),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

/// Seed precedence: flag, then config-file value (if any), then the
/// POSELIFT_SEED environment variable, then 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = config {
        return Ok(s);
    }
    match std::env::var("POSELIFT_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("POSELIFT_SEED is not an integer: {v:?}"))),
        Err(_) => Ok(0),
    }
}

fn usage(msg: &str) -> Result<i32> {
    eprintln!("usage error: {msg}");
    Ok(2)
}

fn load_skeleton(spec: &str) -> Result<Skeleton<f64>> {
    match spec {
        "h36m16" => Ok(Skeleton::h36m16()),
        "h36m17" => Ok(Skeleton::h36m17()),
        path => Skeleton::load_json(Path::new(path)),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let seed = resolve_seed(args.seed, None)?;
    let skeleton = load_skeleton(&args.skeleton)?;
    let cfg = SynthConfig {
        n: args.count,
        ..Default::default()
    };
    log::info!(
        "synth: skeleton {} ({} joints), count {}, seed {seed}, strip_labels {}, out {}",
        args.skeleton,
        skeleton.n_joints(),
        args.count,
        args.strip_labels,
        args.out.display()
    );
    let mut rng = stream(seed, Stream::Synth);
    let mut samples = synth_dataset(&skeleton, &cfg, &mut rng)?;
    if args.strip_labels {
        samples = strip_labels(&samples);
    }
    save_dataset(&args.out, &samples)?;
    log::info!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(0)
}

fn joint_set_for(joints: usize) -> JointSet {
    match joints {
        16 => JointSet::H36m16,
        17 => JointSet::H36m17,
        _ => JointSet::Custom,
    }
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    // Config file first, then flag overrides.
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str::<TrainConfig>(&text).map_err(|e| {
                Error::Config(format!("config file {}: {e}", path.display()))
            })?
        }
        None => TrainConfig::default(),
    };
    let config_seed = args.config.as_ref().map(|_| cfg.seed);
    cfg.seed = resolve_seed(args.seed, config_seed)?;
    if let Some(mode) = args.mode {
        cfg.mode = mode.into();
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.width {
        cfg.width = v;
    }
    if let Some(v) = args.dropout {
        cfg.dropout = v;
    }
    if let Some(v) = args.disc_ratio {
        cfg.disc_ratio = v;
    }
    if let Some(v) = args.lr_decay {
        cfg.lr_decay = v;
    }
    if let Some(v) = args.patience {
        cfg.patience = v;
    }
    if args.detach_reencoder {
        cfg.detach_reencoder = true;
    }
    if let Some(v) = args.reencode_source {
        cfg.reencode_source = match v {
            CliReencode::Generator => ReencodeSource::Generator,
            CliReencode::Decoder => ReencodeSource::Decoder,
        };
    }
    if let Some(v) = args.lambda_est {
        cfg.weights.estimation = v;
    }
    if let Some(v) = args.lambda_perc {
        cfg.weights.perceptual = v;
    }
    if let Some(v) = args.lambda_rec {
        cfg.weights.reconstruction = v;
    }
    if let Some(v) = args.lambda_adv {
        cfg.weights.adversarial = v;
    }
    if let Some(v) = args.lambda_perc_ul {
        cfg.weights.perceptual_unlabeled = v;
    }

    if cfg.mode == TrainMode::Semi && args.unlabeled.is_none() {
        return usage("--mode semi requires --unlabeled");
    }
    if let Err(e) = cfg.validate() {
        return usage(&e.to_string());
    }

    let labeled: Vec<PoseSample<f64>> = load_dataset(&args.labeled, args.root)?;
    let val: Vec<PoseSample<f64>> = load_dataset(&args.val, args.root)?;
    let unlabeled: Vec<PoseSample<f64>> = match &args.unlabeled {
        Some(path) => load_dataset(path, args.root)?,
        None => Vec::new(),
    };
    if let Some(first) = labeled.first() {
        cfg.joint_set = joint_set_for(first.n_joints());
    }

    log::info!(
        "resolved config: {}",
        serde_json::to_string(&cfg).expect("config serializes")
    );
    log::info!(
        "datasets: {} labeled, {} unlabeled, {} validation",
        labeled.len(),
        unlabeled.len(),
        val.len()
    );

    let outcome = train::<f64>(&labeled, &unlabeled, &val, &cfg)?;
    checkpoint::save(&args.out_checkpoint, &outcome.model, &outcome.norm)?;
    if let Some(log_path) = &args.log {
        write_log_csv(log_path, &outcome.log)?;
    }
    match outcome.status {
        TrainStatus::Completed => {
            log::info!(
                "training complete: best val MPJPE {:.3} mm, checkpoint {}",
                outcome.best_val_mpjpe,
                args.out_checkpoint.display()
            );
            Ok(0)
        }
        TrainStatus::NanAbort { step } => {
            log::error!(
                "non-finite loss at step {step}; saved the last good model to {}",
                args.out_checkpoint.display()
            );
            Ok(1)
        }
    }
}

fn print_report(report: &EvalReport, protocol: Protocol, per_action: bool) {
    match protocol {
        Protocol::P1 => println!("mpjpe_p1 = {:.6} mm", report.mpjpe_p1),
        Protocol::P2 => println!("mpjpe_p2 = {:.6} mm", report.mpjpe_p2),
        Protocol::Pck => println!("pck = {:.6}", report.pck),
        Protocol::Auc => println!("auc = {:.6}", report.auc),
        Protocol::All => {
            if per_action {
                print!("{}", report.to_table());
            } else {
                println!("mpjpe_p1 = {:.6} mm", report.mpjpe_p1);
                println!("mpjpe_p2 = {:.6} mm", report.mpjpe_p2);
                println!("pck = {:.6}", report.pck);
                println!("auc = {:.6}", report.auc);
                println!("n_samples = {}", report.n_samples);
            }
        }
    }
}

fn cmd_eval(args: EvalArgs) -> Result<i32> {
    let (mut model, norm) = checkpoint::load::<f64>(&args.checkpoint)?;
    let data: Vec<PoseSample<f64>> = load_dataset(&args.data, args.root)?;
    log::info!(
        "eval: checkpoint {} ({} joints, width {}), {} samples",
        args.checkpoint.display(),
        model.joints,
        model.width,
        data.len()
    );
    let report = evaluate(&mut model, &data, &norm, &EvalOptions::default())?;
    print_report(&report, args.protocol, args.per_action);
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json())?;
        log::info!("wrote report to {}", out.display());
    }
    Ok(0)
}

fn cmd_predict(args: PredictArgs) -> Result<i32> {
    let (mut model, norm) = checkpoint::load::<f64>(&args.checkpoint)?;
    let data: Vec<PoseSample<f64>> = load_dataset(&args.data, args.root)?;
    log::info!(
        "predict: checkpoint {} ({} joints), {} samples",
        args.checkpoint.display(),
        model.joints,
        data.len()
    );
    let preds = crate::metrics::predict_poses(&mut model, &data, &norm)?;
    let out_samples: Vec<PoseSample<f64>> = data
        .iter()
        .zip(preds)
        .map(|(s, pred)| PoseSample {
            subject: s.subject.clone(),
            action: s.action.clone(),
            pose2d: s.pose2d.clone(),
            pose3d: Some(root_center(&pred, args.root)),
            camera: None,
        })
        .collect();
    save_dataset(&args.out, &out_samples)?;
    log::info!(
        "wrote {} predictions to {}",
        out_samples.len(),
        args.out.display()
    );
    Ok(0)
}

fn cmd_export_features(args: ExportFeaturesArgs) -> Result<i32> {
    let (mut model, norm) = checkpoint::load::<f64>(&args.checkpoint)?;
    let data: Vec<PoseSample<f64>> = load_dataset(&args.data, args.root)?;
    log::info!(
        "export-features: checkpoint {} (width {}), {} samples, reencoded {}",
        args.checkpoint.display(),
        model.width,
        data.len(),
        args.include_reencoded
    );
    let rows = extract_features(&mut model, &data, &norm, args.include_reencoded)?;
    write_features_csv(&args.out, &rows)?;
    log::info!("wrote {} feature rows to {}", rows.len(), args.out.display());
    Ok(0)
}

fn cmd_selfcheck() -> Result<i32> {
    let results = selfcheck::run_all();
    print!("{}", selfcheck::render_table(&results));
    Ok(if selfcheck::all_passed(&results) { 0 } else { 1 })
}

//! Command-line interface: gen, train, eval, predict, gradcheck, bench.
//!
//! Configuration resolves in three layers: built-in defaults, then an
//! optional TOML/JSON config file (unknown keys rejected), then flags. Every
//! run writes its fully resolved configuration next to its outputs as
//! `resolved.toml`, and is reproducible from that file alone.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use waunet_core::net::{build_waunet, predict_labels, NetConfig};
use waunet_core::ops::OpKind;
use waunet_core::phantom::{default_recipes, PhantomSpec};
use waunet_core::{Scalar, Tensor};

use crate::bench::{rows_csv, run_bench, BenchConfig};
use crate::checkpoint::{load_checkpoint, read_manifest};
use crate::dataset::{generate_dataset, Dataset, GenOptions, Split};
use crate::error::{AppError, Result};
use crate::gradreport::{run_gradcheck, GradCheckConfig};
use crate::render;
use crate::report;
use crate::trainer::{self, evaluate, run_kfold, AugmentSettings, TrainSettings};
use crate::wtf1::{self, Wtf1};

#[derive(Parser, Debug)]
#[command(name = "waunet", version, about = "CNN/axial-attention segmentation engine")]
pub struct Cli {
    /// TOML or JSON config file; command-line flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for the subcommand.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for artifacts and the resolved config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic phantom dataset directory.
    Gen(GenArgs),
    /// Train a network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint: DSC/HD95/MSD report as CSV and JSON.
    Eval(EvalArgs),
    /// Predict label maps and render input/overlay/difference images.
    Predict(PredictArgs),
    /// Check every backward kernel and the full network against central
    /// differences.
    Gradcheck(GradcheckArgs),
    /// Measure axial vs full attention cost scaling.
    Bench(BenchArgs),
}

// ---------------------------------------------------------------- config file

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    gen: Option<GenSection>,
    train: Option<TrainSection>,
    eval: Option<EvalSection>,
    predict: Option<PredictSection>,
    gradcheck: Option<GradcheckSection>,
    bench: Option<BenchSection>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenSection {
    cases: Option<usize>,
    size: Option<usize>,
    gen_size: Option<usize>,
    organs: Option<usize>,
    noise_std: Option<f64>,
    train_frac: Option<f64>,
    val_frac: Option<f64>,
    test_frac: Option<f64>,
    spacing: Option<(f64, f64)>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainSection {
    data: Option<PathBuf>,
    steps: Option<u64>,
    batch: Option<usize>,
    lr: Option<f64>,
    poly_power: Option<f64>,
    levels: Option<usize>,
    filters: Option<Vec<usize>>,
    depths: Option<Vec<usize>>,
    heads: Option<usize>,
    batch_norm: Option<bool>,
    precision: Option<String>,
    eval_every: Option<u64>,
    checkpoint_every: Option<u64>,
    clip_norm: Option<f64>,
    augment: Option<bool>,
    max_shift: Option<f64>,
    max_rotation: Option<f64>,
    ablate_attention: Option<bool>,
    patience: Option<u64>,
    kfold: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalSection {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    split: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictSection {
    checkpoint: Option<PathBuf>,
    data: Option<PathBuf>,
    split: Option<String>,
    case: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct GradcheckSection {
    eps: Option<f64>,
    samples: Option<usize>,
    per_op_threshold: Option<f64>,
    net_threshold: Option<f64>,
    inject_fault: Option<String>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchSection {
    sizes: Option<Vec<usize>>,
    full_cap: Option<usize>,
    channels: Option<usize>,
    heads: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let is_json = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("json"))
        .unwrap_or(false);
    if is_json {
        serde_json::from_str(&text).map_err(|e| AppError::Usage(format!(
            "{}: {e}",
            path.display()
        )))
    } else {
        toml::from_str(&text).map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
    }
}

/// `WAUNET_THREADS` caps internal kernel parallelism. Kernels currently run
/// on a single thread, which satisfies any positive bound; the value is
/// validated and recorded in the resolved config.
fn thread_bound() -> Result<usize> {
    match std::env::var("WAUNET_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(AppError::Usage(format!(
                "WAUNET_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn ensure_out_dir(out: &Option<PathBuf>, force: bool, must_be_empty: bool) -> Result<PathBuf> {
    let out = out
        .clone()
        .ok_or_else(|| AppError::Usage("--out DIR is required".into()))?;
    if must_be_empty && out.exists() && !force {
        let occupied = fs::read_dir(&out)
            .map_err(|e| AppError::io(&out, e))?
            .next()
            .is_some();
        if occupied {
            return Err(AppError::Usage(format!(
                "output directory {} is not empty (use --force to overwrite)",
                out.display()
            )));
        }
    }
    fs::create_dir_all(&out).map_err(|e| AppError::io(&out, e))?;
    Ok(out)
}

fn write_resolved<S: Serialize>(out: &Path, resolved: &S) -> Result<()> {
    let text = toml::to_string_pretty(resolved)
        .map_err(|e| AppError::Runtime(format!("resolved config serialization: {e}")))?;
    let path = out.join("resolved.toml");
    fs::write(&path, text).map_err(|e| AppError::io(&path, e))
}

fn merge<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

// ------------------------------------------------------------------------ gen

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Number of cases to generate.
    #[arg(long)]
    pub cases: Option<usize>,
    /// Final image size (after the optional center crop).
    #[arg(long)]
    pub size: Option<usize>,
    /// Generation size; when larger than --size the pair is center-cropped.
    #[arg(long)]
    pub gen_size: Option<usize>,
    /// Foreground organ count (1..=10).
    #[arg(long)]
    pub organs: Option<usize>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
    #[arg(long)]
    pub test_frac: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ResolvedGen {
    command: &'static str,
    seed: u64,
    out: PathBuf,
    cases: usize,
    size: usize,
    gen_size: usize,
    organs: usize,
    noise_std: f64,
    train_frac: f64,
    val_frac: f64,
    test_frac: f64,
    spacing: (f64, f64),
    thread_bound: usize,
}

fn run_gen(cli: &Cli, args: &GenArgs, file: &FileConfig) -> Result<()> {
    let section = file.gen.as_ref().cloned_or_default();
    let resolved = ResolvedGen {
        command: "gen",
        seed: merge(cli.seed, file.seed, 7),
        out: cli.out.clone().or(file.out.clone()).unwrap_or_default(),
        cases: merge(args.cases, section.cases, 16),
        size: merge(args.size, section.size, 32),
        gen_size: args
            .gen_size
            .or(section.gen_size)
            .or(args.size)
            .or(section.size)
            .unwrap_or(32),
        organs: merge(args.organs, section.organs, 4),
        noise_std: merge(args.noise_std, section.noise_std, 0.02),
        train_frac: merge(args.train_frac, section.train_frac, 0.7),
        val_frac: merge(args.val_frac, section.val_frac, 0.1),
        test_frac: merge(args.test_frac, section.test_frac, 0.2),
        spacing: section.spacing.unwrap_or((1.0, 1.0)),
        thread_bound: thread_bound()?,
    };
    if resolved.cases == 0 {
        return Err(AppError::Usage("gen: --cases must be >= 1".into()));
    }
    let out = ensure_out_dir(&Some(resolved.out.clone()), cli.force, true)?;

    let spec = PhantomSpec {
        size: resolved.gen_size.max(resolved.size),
        seed: resolved.seed,
        noise_std: resolved.noise_std,
        recipes: default_recipes(resolved.organs).map_err(AppError::Core)?,
    };
    let manifest = generate_dataset(
        &out,
        &GenOptions {
            spec,
            cases: resolved.cases,
            size: resolved.size,
            ratios: (resolved.train_frac, resolved.val_frac, resolved.test_frac),
            spacing: resolved.spacing,
            force: true, // emptiness already enforced above
        },
    )?;
    write_resolved(&out, &resolved)?;
    println!(
        "generated {} cases ({} train / {} val / {} test) in {}",
        manifest.cases,
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len(),
        out.display()
    );
    Ok(())
}

trait ClonedOrDefault {
    type Out;
    fn cloned_or_default(&self) -> Self::Out;
}

impl<'a, T: Clone + Default> ClonedOrDefault for Option<&'a T> {
    type Out = T;
    fn cloned_or_default(&self) -> T {
        (*self).cloned().unwrap_or_default()
    }
}

// ---------------------------------------------------------------------- train

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory produced by `gen`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub poly_power: Option<f64>,
    /// Pyramid levels; filters and depths must match.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Per-level channel counts, e.g. 8,16,32.
    #[arg(long, value_delimiter = ',')]
    pub filters: Option<Vec<usize>>,
    /// Per-level attention depths, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Enable per-channel batch normalization inside CNN blocks.
    #[arg(long)]
    pub batch_norm: bool,
    /// f32 (default) or f64.
    #[arg(long)]
    pub precision: Option<String>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Random shift/rotate/flip augmentation.
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub max_shift: Option<f64>,
    #[arg(long)]
    pub max_rotation: Option<f64>,
    /// Freeze attention parameters at their zero-projection init.
    #[arg(long)]
    pub ablate_attention: bool,
    /// Early-stop patience in steps (needs --eval-every).
    #[arg(long)]
    pub patience: Option<u64>,
    /// Run k-fold cross-validation instead of a single split.
    #[arg(long)]
    pub kfold: Option<usize>,
    /// Resume from a checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ResolvedTrain {
    command: &'static str,
    seed: u64,
    out: PathBuf,
    data: PathBuf,
    net: NetConfig,
    precision: String,
    settings: TrainSettings,
    kfold: Option<usize>,
    resume: Option<PathBuf>,
    thread_bound: usize,
}

fn resolve_train(cli: &Cli, args: &TrainArgs, file: &FileConfig) -> Result<ResolvedTrain> {
    let section = file.train.as_ref().cloned_or_default();
    let data = args
        .data
        .clone()
        .or(section.data)
        .ok_or_else(|| AppError::Usage("train: --data DIR is required".into()))?;
    let manifest_probe = Dataset::load(&data)?;
    let input_size = manifest_probe.manifest.size;
    let num_classes = manifest_probe.manifest.num_classes();

    let filters = args
        .filters
        .clone()
        .or(section.filters)
        .unwrap_or_else(|| vec![8, 16, 32]);
    let depths = args
        .depths
        .clone()
        .or(section.depths)
        .unwrap_or_else(|| vec![1, 2, 3]);
    let levels = merge(args.levels, section.levels, filters.len());
    let net = NetConfig {
        levels,
        filters,
        attention_depths: depths,
        heads: merge(args.heads, section.heads, 2),
        num_classes,
        input_size,
        in_channels: 1,
        batch_norm: args.batch_norm || section.batch_norm.unwrap_or(false),
    };

    let seed = merge(cli.seed, file.seed, 7);
    let augment = if args.augment || section.augment.unwrap_or(false) {
        Some(AugmentSettings {
            max_shift: merge(args.max_shift, section.max_shift, 0.1 * input_size as f64),
            max_rotation_deg: merge(args.max_rotation, section.max_rotation, 15.0),
            flip_h: true,
            flip_v: true,
        })
    } else {
        None
    };
    let settings = TrainSettings {
        lr0: merge(args.lr, section.lr, 1e-3),
        poly_power: merge(args.poly_power, section.poly_power, 0.9),
        total_steps: merge(args.steps, section.steps, 300),
        batch_size: merge(args.batch, section.batch, 2),
        seed,
        eval_every: args.eval_every.or(section.eval_every),
        checkpoint_every: args.checkpoint_every.or(section.checkpoint_every),
        clip_norm: args.clip_norm.or(section.clip_norm),
        augment,
        freeze_attention: args.ablate_attention || section.ablate_attention.unwrap_or(false),
        early_stop_patience: args.patience.or(section.patience),
        ..TrainSettings::default()
    };
    let precision = merge(
        args.precision.clone(),
        section.precision,
        "f32".to_string(),
    );
    if precision != "f32" && precision != "f64" {
        return Err(AppError::Usage(format!(
            "train: --precision must be f32 or f64, got {precision}"
        )));
    }
    Ok(ResolvedTrain {
        command: "train",
        seed,
        out: cli.out.clone().or(file.out.clone()).unwrap_or_default(),
        data,
        net,
        precision,
        settings,
        kfold: args.kfold.or(section.kfold),
        resume: args.resume.clone(),
        thread_bound: thread_bound()?,
    })
}

fn train_typed<T: Scalar>(resolved: &ResolvedTrain, data: &Dataset, out: &Path) -> Result<()> {
    if let Some(k) = resolved.kfold {
        let reports = run_kfold::<T>(&resolved.net, data, k, &resolved.settings, out)?;
        for (fold, rep) in reports.iter().enumerate() {
            report::write_csv(&out.join(format!("fold-{fold}-metrics.csv")), rep)?;
            println!(
                "fold {fold}: mean foreground DSC {:.4}",
                rep.mean_foreground_dsc()
            );
        }
        return Ok(());
    }
    let outcome = trainer::train::<T>(
        &resolved.net,
        data,
        data.split(Split::Train),
        data.split(Split::Val),
        &resolved.settings,
        out,
        resolved.resume.as_deref(),
    )?;
    println!(
        "trained to step {} (final loss {:.6}); checkpoint at {}",
        outcome.final_step,
        outcome.loss_history.last().copied().unwrap_or(f64::NAN),
        outcome.checkpoint_dir.display()
    );
    Ok(())
}

fn run_train(cli: &Cli, args: &TrainArgs, file: &FileConfig) -> Result<()> {
    let resolved = resolve_train(cli, args, file)?;
    let out = ensure_out_dir(&Some(resolved.out.clone()), cli.force, false)?;
    write_resolved(&out, &resolved)?;
    let data = Dataset::load(&resolved.data)?;
    match resolved.precision.as_str() {
        "f32" => train_typed::<f32>(&resolved, &data, &out),
        _ => train_typed::<f64>(&resolved, &data, &out),
    }
}

// ----------------------------------------------------------------------- eval

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, val or test (falls back to all cases when the split is empty).
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Debug, Serialize)]
struct ResolvedEval {
    command: &'static str,
    out: PathBuf,
    checkpoint: PathBuf,
    data: PathBuf,
    split: String,
    thread_bound: usize,
}

fn eval_typed<T: Scalar>(
    ckpt: &Path,
    data: &Dataset,
    indices: &[usize],
) -> Result<waunet_core::metrics::MetricReport> {
    let (net, _, _) = load_checkpoint::<T>(ckpt)?;
    evaluate(&net, data, indices)
}

fn run_eval(cli: &Cli, args: &EvalArgs, file: &FileConfig) -> Result<()> {
    let section = file.eval.as_ref().cloned_or_default();
    let resolved = ResolvedEval {
        command: "eval",
        out: cli.out.clone().or(file.out.clone()).unwrap_or_default(),
        checkpoint: args
            .checkpoint
            .clone()
            .or(section.checkpoint)
            .ok_or_else(|| AppError::Usage("eval: --checkpoint DIR is required".into()))?,
        data: args
            .data
            .clone()
            .or(section.data)
            .ok_or_else(|| AppError::Usage("eval: --data DIR is required".into()))?,
        split: merge(args.split.clone(), section.split, "test".to_string()),
        thread_bound: thread_bound()?,
    };
    if !resolved.checkpoint.join("manifest.json").exists() {
        return Err(AppError::Runtime(format!(
            "missing checkpoint at {}",
            resolved.checkpoint.display()
        )));
    }
    let out = ensure_out_dir(&Some(resolved.out.clone()), cli.force, false)?;
    write_resolved(&out, &resolved)?;

    let data = Dataset::load(&resolved.data)?;
    let split = Split::parse(&resolved.split)?;
    let indices = data.split_or_all(split);
    let manifest = read_manifest(&resolved.checkpoint)?;
    let rep = match manifest.dtype.as_str() {
        "f32" => eval_typed::<f32>(&resolved.checkpoint, &data, &indices)?,
        _ => eval_typed::<f64>(&resolved.checkpoint, &data, &indices)?,
    };
    report::write_csv(&out.join("metrics.csv"), &rep)?;
    report::write_json(&out.join("metrics.json"), &rep)?;
    println!("{}", report::to_csv(&rep).trim_end());
    println!("mean foreground DSC: {:.4}", rep.mean_foreground_dsc());
    Ok(())
}

// -------------------------------------------------------------------- predict

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Predict a whole split...
    #[arg(long)]
    pub split: Option<String>,
    /// ...or one case index.
    #[arg(long)]
    pub case: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ResolvedPredict {
    command: &'static str,
    out: PathBuf,
    checkpoint: PathBuf,
    data: PathBuf,
    split: Option<String>,
    case: Option<usize>,
    thread_bound: usize,
}

fn predict_typed<T: Scalar>(
    ckpt: &Path,
    data: &Dataset,
    indices: &[usize],
    out: &Path,
) -> Result<()> {
    let (net, _, _) = load_checkpoint::<T>(ckpt)?;
    let size = data.manifest.size;
    for &idx in indices {
        let case = &data.cases[idx];
        let image = Tensor::from_vec(
            vec![1usize, 1, size, size],
            case.image.cast::<T>().into_data(),
        )
        .map_err(AppError::Core)?;
        let logits = net.infer(&image).map_err(AppError::Core)?;
        let pred = predict_labels(&logits, data.manifest.spacing)
            .map_err(AppError::Core)?
            .remove(0);

        let stem = format!("case_{idx:04}");
        wtf1::write(
            &out.join(format!("{stem}_pred.wtf1")),
            &Wtf1::U8 {
                shape: vec![pred.height(), pred.width()],
                data: pred.data().to_vec(),
            },
        )?;
        render::write_pgm(&out.join(format!("{stem}_input.pgm")), &case.image)?;
        let overlay = render::overlay_rgb(&case.image, &case.labels, &pred)?;
        render::write_ppm(
            &out.join(format!("{stem}_overlay.ppm")),
            pred.width(),
            pred.height(),
            &overlay,
        )?;
        let diff = render::difference_rgb(&case.labels, &pred)?;
        render::write_ppm(
            &out.join(format!("{stem}_diff.ppm")),
            pred.width(),
            pred.height(),
            &diff,
        )?;
    }
    Ok(())
}

fn run_predict(cli: &Cli, args: &PredictArgs, file: &FileConfig) -> Result<()> {
    let section = file.predict.as_ref().cloned_or_default();
    let resolved = ResolvedPredict {
        command: "predict",
        out: cli.out.clone().or(file.out.clone()).unwrap_or_default(),
        checkpoint: args
            .checkpoint
            .clone()
            .or(section.checkpoint)
            .ok_or_else(|| AppError::Usage("predict: --checkpoint DIR is required".into()))?,
        data: args
            .data
            .clone()
            .or(section.data)
            .ok_or_else(|| AppError::Usage("predict: --data DIR is required".into()))?,
        split: args.split.clone().or(section.split),
        case: args.case.or(section.case),
        thread_bound: thread_bound()?,
    };
    if !resolved.checkpoint.join("manifest.json").exists() {
        return Err(AppError::Runtime(format!(
            "missing checkpoint at {}",
            resolved.checkpoint.display()
        )));
    }
    let out = ensure_out_dir(&Some(resolved.out.clone()), cli.force, false)?;
    write_resolved(&out, &resolved)?;

    let data = Dataset::load(&resolved.data)?;
    let indices: Vec<usize> = match (resolved.case, &resolved.split) {
        (Some(idx), _) => {
            if idx >= data.cases.len() {
                return Err(AppError::Usage(format!(
                    "predict: case {idx} out of range (dataset has {})",
                    data.cases.len()
                )));
            }
            vec![idx]
        }
        (None, Some(split)) => data.split_or_all(Split::parse(split)?),
        (None, None) => (0..data.cases.len()).collect(),
    };
    let manifest = read_manifest(&resolved.checkpoint)?;
    match manifest.dtype.as_str() {
        "f32" => predict_typed::<f32>(&resolved.checkpoint, &data, &indices, &out)?,
        _ => predict_typed::<f64>(&resolved.checkpoint, &data, &indices, &out)?,
    }
    println!("predicted {} case(s) into {}", indices.len(), out.display());
    Ok(())
}

// ------------------------------------------------------------------ gradcheck

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    /// Sampled parameter coordinates for the full-network check.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub per_op_threshold: Option<f64>,
    #[arg(long)]
    pub net_threshold: Option<f64>,
    /// Corrupt one backward kernel (by op name) to prove detection works.
    #[arg(long)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Serialize)]
struct ResolvedGradcheck {
    command: &'static str,
    seed: u64,
    out: PathBuf,
    eps: f64,
    samples: usize,
    per_op_threshold: f64,
    net_threshold: f64,
    inject_fault: Option<String>,
    thread_bound: usize,
}

fn run_gradcheck_cmd(cli: &Cli, args: &GradcheckArgs, file: &FileConfig) -> Result<()> {
    let section = file.gradcheck.as_ref().cloned_or_default();
    let resolved = ResolvedGradcheck {
        command: "gradcheck",
        seed: merge(cli.seed, file.seed, 9),
        out: cli.out.clone().or(file.out.clone()).unwrap_or_default(),
        eps: merge(args.eps, section.eps, 1e-4),
        samples: merge(args.samples, section.samples, 240),
        per_op_threshold: merge(args.per_op_threshold, section.per_op_threshold, 1e-5),
        net_threshold: merge(args.net_threshold, section.net_threshold, 1e-4),
        inject_fault: args.inject_fault.clone().or(section.inject_fault),
        thread_bound: thread_bound()?,
    };
    let inject = match &resolved.inject_fault {
        None => None,
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| {
            AppError::Usage(format!("gradcheck: unknown op kind {name:?}"))
        })?),
    };
    let out = ensure_out_dir(&Some(resolved.out.clone()), cli.force, false)?;
    write_resolved(&out, &resolved)?;

    let report = run_gradcheck(&GradCheckConfig {
        eps: resolved.eps,
        per_op_threshold: resolved.per_op_threshold,
        net_threshold: resolved.net_threshold,
        net_samples: resolved.samples,
        seed: resolved.seed,
        inject_fault: inject,
    })?;
    for row in &report.rows {
        println!(
            "{:<16} max_rel_err {:>12.4e} coords {:>6} skipped {:>3}  {}",
            row.name,
            row.max_rel_err,
            row.coords_checked,
            row.coords_skipped,
            if row.pass { "PASS" } else { "FAIL" }
        );
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| AppError::Runtime(format!("gradcheck report: {e}")))?;
    let path = out.join("gradcheck.json");
    fs::write(&path, json).map_err(|e| AppError::io(&path, e))?;
    if !report.pass {
        let offenders: Vec<&str> = report
            .rows
            .iter()
            .filter(|r| !r.pass)
            .map(|r| r.name.as_str())
            .collect();
        return Err(AppError::Runtime(format!(
            "gradient check failed for: {}",
            offenders.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------- bench

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Square sizes to sweep, e.g. 8,16,32,64.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Largest size the quadratic reference runs at.
    #[arg(long)]
    pub full_cap: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ResolvedBench {
    command: &'static str,
    seed: u64,
    out: PathBuf,
    sizes: Vec<usize>,
    full_cap: usize,
    channels: usize,
    heads: usize,
    thread_bound: usize,
}

fn run_bench_cmd(cli: &Cli, args: &BenchArgs, file: &FileConfig) -> Result<()> {
    let section = file.bench.as_ref().cloned_or_default();
    let resolved = ResolvedBench {
        command: "bench",
        seed: merge(cli.seed, file.seed, 7),
        out: cli.out.clone().or(file.out.clone()).unwrap_or_default(),
        sizes: args
            .sizes
            .clone()
            .or(section.sizes)
            .unwrap_or_else(|| vec![8, 16, 32, 64]),
        full_cap: merge(args.full_cap, section.full_cap, 32),
        channels: merge(args.channels, section.channels, 16),
        heads: merge(args.heads, section.heads, 8),
        thread_bound: thread_bound()?,
    };
    let out = ensure_out_dir(&Some(resolved.out.clone()), cli.force, false)?;
    write_resolved(&out, &resolved)?;

    let report = run_bench(&BenchConfig {
        sizes: resolved.sizes.clone(),
        full_cap: resolved.full_cap,
        channels: resolved.channels,
        heads: resolved.heads,
        seed: resolved.seed,
    })?;
    print!("{}", rows_csv(&report));
    for (s, ratio) in &report.flop_ratios {
        println!("full/axial flops at {s}x{s}: {ratio}x");
    }
    println!(
        "slopes: full vs tokens {:.3} (theory 2), axial vs sqrt(HW(H+W)) {:.3} (theory 2), \
         full vs side {:.3} (theory 4), axial vs side {:.3} (theory 3)",
        report.slopes.full_vs_tokens,
        report.slopes.axial_vs_sqrt_cost,
        report.slopes.full_vs_side,
        report.slopes.axial_vs_side
    );
    let csv_path = out.join("bench.csv");
    fs::write(&csv_path, rows_csv(&report)).map_err(|e| AppError::io(&csv_path, e))?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| AppError::Runtime(format!("bench report: {e}")))?;
    let json_path = out.join("bench.json");
    fs::write(&json_path, json).map_err(|e| AppError::io(&json_path, e))?;
    Ok(())
}

// ------------------------------------------------------------------- dispatch

pub fn run(cli: Cli) -> Result<()> {
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Gen(args) => run_gen(&cli, args, &file),
        Command::Train(args) => run_train(&cli, args, &file),
        Command::Eval(args) => run_eval(&cli, args, &file),
        Command::Predict(args) => run_predict(&cli, args, &file),
        Command::Gradcheck(args) => run_gradcheck_cmd(&cli, args, &file),
        Command::Bench(args) => run_bench_cmd(&cli, args, &file),
    }
}

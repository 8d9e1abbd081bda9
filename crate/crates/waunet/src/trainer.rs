//! The optimization loop: Adam with a polynomial learning-rate schedule over
//! cross-entropy, plus evaluation, checkpointing and a k-fold driver.
//!
//! Determinism contract: `(seed, config, dataset)` fixes the whole loss
//! trajectory. Batch selection and augmentation draw from RNG streams
//! addressed by the step index, never from carried-forward RNG state, so a
//! run resumed from a checkpoint replays the uninterrupted run exactly.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use waunet_core::metrics::MetricReport;
use waunet_core::net::{build_waunet, labels_to_targets, predict_labels, NetConfig, WauNet};
use waunet_core::optim::{adam_step, clip_global_norm, poly_lr, AdamConfig, AdamState};
use waunet_core::phantom::{apply_transform, sample_transform, AugmentParams};
use waunet_core::rng::{stream_rng, streams};
use waunet_core::{Graph, Scalar, Tensor};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dataset::Dataset;
use crate::error::{AppError, Result};

/// Augmentation bounds used during training; per-step seeds are derived from
/// the training seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AugmentSettings {
    pub max_shift: f64,
    pub max_rotation_deg: f64,
    pub flip_h: bool,
    pub flip_v: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub lr0: f64,
    pub poly_power: f64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub eval_every: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub clip_norm: Option<f64>,
    pub augment: Option<AugmentSettings>,
    /// Keep every attention parameter frozen at its (zero-projection)
    /// initialization, ablating attention while leaving the wiring intact.
    pub freeze_attention: bool,
    /// Stop when the validation mean foreground DSC has not improved for
    /// this many steps.
    pub early_stop_patience: Option<u64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            lr0: 1e-3,
            poly_power: 0.9,
            total_steps: 300,
            batch_size: 2,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            eval_every: None,
            checkpoint_every: None,
            clip_norm: None,
            augment: None,
            freeze_attention: false,
            early_stop_patience: None,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(AppError::Usage("train: lr0 must be > 0".into()));
        }
        if self.total_steps == 0 {
            return Err(AppError::Usage("train: total_steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(AppError::Usage("train: batch_size must be >= 1".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Serialize)]
#[serde(untagged)]
enum LogRecord<'a> {
    Step { step: u64, lr: f64, loss: f64 },
    Eval { step: u64, eval: &'a MetricReport },
    EarlyStop { step: u64, early_stop: bool },
}

pub struct TrainOutcome {
    pub final_step: u64,
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    pub loss_history: Vec<f64>,
    pub stopped_early: bool,
}

fn is_trainable(settings: &TrainSettings, name: &str) -> bool {
    !(settings.freeze_attention && name.starts_with("att"))
}

/// Stacks dataset cases (optionally augmented) into a `[B,1,S,S]` batch plus
/// flat targets.
fn assemble_batch<T: Scalar>(
    data: &Dataset,
    picks: &[usize],
    transform_seed: Option<u64>,
    settings: &TrainSettings,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let size = data.manifest.size;
    let mut images = Vec::with_capacity(picks.len() * size * size);
    let mut labels = Vec::with_capacity(picks.len());
    for (slot, &idx) in picks.iter().enumerate() {
        let case = &data.cases[idx];
        let (img, lab) = match (&settings.augment, transform_seed) {
            (Some(a), Some(seed)) => {
                let params = AugmentParams {
                    max_shift: a.max_shift,
                    max_rotation_deg: a.max_rotation_deg,
                    flip_h: a.flip_h,
                    flip_v: a.flip_v,
                    seed: 0, // unused: transform drawn from the stream below
                };
                let mut rng = stream_rng(seed, slot as u64);
                let t = sample_transform(&params, &mut rng);
                apply_transform(&case.image.cast::<T>(), &case.labels, &t)
                    .map_err(AppError::Core)?
            }
            _ => (case.image.cast::<T>(), case.labels.clone()),
        };
        images.extend_from_slice(img.data());
        labels.push(lab);
    }
    let batch = Tensor::from_vec(vec![picks.len(), 1, size, size], images)
        .map_err(AppError::Core)?;
    let refs: Vec<&waunet_core::metrics::LabelMap> = labels.iter().collect();
    Ok((batch, labels_to_targets(&refs)))
}

/// Runs (or resumes) a training loop. Writes a JSONL loss log, periodic
/// checkpoints, and a final checkpoint under `out_dir`.
pub fn train<T: Scalar>(
    net_cfg: &NetConfig,
    data: &Dataset,
    train_idx: &[usize],
    val_idx: &[usize],
    settings: &TrainSettings,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainOutcome> {
    settings.validate()?;
    net_cfg.validate().map_err(AppError::Core)?;
    if train_idx.is_empty() {
        return Err(AppError::Usage("train: training split is empty".into()));
    }
    if data.manifest.size != net_cfg.input_size {
        return Err(AppError::Usage(format!(
            "train: dataset size {} does not match network input {}",
            data.manifest.size, net_cfg.input_size
        )));
    }
    if data.manifest.num_classes() != net_cfg.num_classes {
        return Err(AppError::Usage(format!(
            "train: dataset has {} classes, network expects {}",
            data.manifest.num_classes(),
            net_cfg.num_classes
        )));
    }
    fs::create_dir_all(out_dir).map_err(|e| AppError::io(out_dir, e))?;

    let (mut net, mut adam, mut history) = match resume_from {
        Some(dir) => {
            let (net, adam, manifest) = load_checkpoint::<T>(dir)?;
            if &manifest.net != net_cfg {
                return Err(AppError::Usage(
                    "train: checkpoint network config differs from the requested one".into(),
                ));
            }
            (net, adam, manifest.loss_history)
        }
        None => {
            let net = build_waunet::<T>(net_cfg, settings.seed).map_err(AppError::Core)?;
            let adam = AdamState::new(&net.params);
            (net, adam, Vec::new())
        }
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| AppError::io(&log_path, e))?;
    let mut write_log = |rec: &LogRecord| -> Result<()> {
        let line = serde_json::to_string(rec)
            .map_err(|e| AppError::Runtime(format!("log serialization: {e}")))?;
        writeln!(log, "{line}").map_err(|e| AppError::io(&log_path, e))
    };

    let adam_cfg = settings.adam();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_step = adam.step;
    let mut stopped_early = false;

    let start = adam.step;
    for step in start..settings.total_steps {
        let lr = poly_lr(step, settings.total_steps, settings.lr0, settings.poly_power);

        // data order and augmentation come from per-step streams
        let mut batch_rng = stream_rng(settings.seed, streams::batch(step));
        let picks: Vec<usize> = (0..settings.batch_size)
            .map(|_| train_idx[rand::Rng::gen_range(&mut batch_rng, 0..train_idx.len())])
            .collect();
        let aug_seed = settings
            .augment
            .as_ref()
            .map(|_| settings.seed ^ streams::augment(step).rotate_left(32));
        let (batch, targets) = assemble_batch::<T>(data, &picks, aug_seed, settings)?;

        let mut g = Graph::new();
        let vars = net.attach(&mut g, |name| is_trainable(settings, name));
        let x = g.constant(batch);
        let logits = net.forward(&mut g, &vars, x).map_err(AppError::Core)?;
        let loss_id = g.cross_entropy(logits, &targets).map_err(AppError::Core)?;
        let loss = g.scalar_value(loss_id).map_err(AppError::Core)?.as_f64();
        if !loss.is_finite() {
            return Err(AppError::Core(waunet_core::Error::Training(format!(
                "non-finite loss at step {step}; last good checkpoint retained"
            ))));
        }
        g.backward(loss_id).map_err(AppError::Core)?;
        let mut grads: Vec<Option<Vec<T>>> =
            vars.vars.iter().map(|&id| g.take_grad(id)).collect();
        drop(g);

        if let Some(max_norm) = settings.clip_norm {
            clip_global_norm(&mut grads, max_norm);
        }
        adam_step(&mut net.params, &grads, &mut adam, lr, &adam_cfg).map_err(AppError::Core)?;

        history.push(loss);
        write_log(&LogRecord::Step { step, lr, loss })?;

        if let Some(every) = settings.eval_every {
            if (step + 1) % every == 0 && !val_idx.is_empty() {
                let report = evaluate(&net, data, val_idx)?;
                write_log(&LogRecord::Eval {
                    step,
                    eval: &report,
                })?;
                let score = report.mean_foreground_dsc();
                if score > best_val + 1e-9 {
                    best_val = score;
                    best_step = step;
                } else if let Some(patience) = settings.early_stop_patience {
                    if step - best_step >= patience {
                        stopped_early = true;
                        write_log(&LogRecord::EarlyStop {
                            step,
                            early_stop: true,
                        })?;
                    }
                }
            }
        }

        if let Some(every) = settings.checkpoint_every {
            if (step + 1) % every == 0 {
                let dir = out_dir.join(format!("ckpt-{:06}", step + 1));
                save_checkpoint(&dir, &net, &adam, settings, &history)?;
            }
        }
        if stopped_early {
            break;
        }
    }

    let checkpoint_dir = out_dir.join("checkpoint");
    save_checkpoint(&checkpoint_dir, &net, &adam, settings, &history)?;
    Ok(TrainOutcome {
        final_step: adam.step,
        checkpoint_dir,
        log_path,
        loss_history: history,
        stopped_early,
    })
}

/// Forward + argmax + segmentation metrics over the given cases.
pub fn evaluate<T: Scalar>(
    net: &WauNet<T>,
    data: &Dataset,
    indices: &[usize],
) -> Result<MetricReport> {
    if indices.is_empty() {
        return Err(AppError::Usage("evaluate: empty split".into()));
    }
    let size = data.manifest.size;
    let mut pairs = Vec::with_capacity(indices.len());
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
        pairs.push((case.labels.clone(), pred));
    }
    let refs: Vec<(&waunet_core::metrics::LabelMap, &waunet_core::metrics::LabelMap)> =
        pairs.iter().map(|(t, p)| (t, p)).collect();
    waunet_core::metrics::metric_report(
        &refs,
        data.manifest.num_classes(),
        &data.manifest.class_names,
    )
    .map_err(AppError::Core)
}

/// Fold assignments for k-fold cross-validation: disjoint validation folds
/// covering every case once.
pub fn kfold_splits(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k < 2 || k > n {
        return Err(AppError::Usage(format!(
            "kfold: need 2 <= k <= cases, got k={k} with {n} cases"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 1);
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let mut folds = Vec::with_capacity(k);
    for fold in 0..k {
        let val: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k == fold)
            .map(|(_, &c)| c)
            .collect();
        let train: Vec<usize> = order
            .iter()
            .enumerate()
            .filter(|(i, _)| i % k != fold)
            .map(|(_, &c)| c)
            .collect();
        folds.push((train, val));
    }
    Ok(folds)
}

/// Trains one model per fold and evaluates it on the held-out fold.
pub fn run_kfold<T: Scalar>(
    net_cfg: &NetConfig,
    data: &Dataset,
    k: usize,
    settings: &TrainSettings,
    out_dir: &Path,
) -> Result<Vec<MetricReport>> {
    let folds = kfold_splits(data.cases.len(), k, settings.seed)?;
    let mut reports = Vec::with_capacity(k);
    for (fold, (train_idx, val_idx)) in folds.iter().enumerate() {
        let fold_dir = out_dir.join(format!("fold-{fold}"));
        let mut fold_settings = settings.clone();
        fold_settings.seed = settings.seed.wrapping_add(fold as u64);
        let outcome = train::<T>(
            net_cfg,
            data,
            train_idx,
            val_idx,
            &fold_settings,
            &fold_dir,
            None,
        )?;
        let (net, _, _) = load_checkpoint::<T>(&outcome.checkpoint_dir)?;
        reports.push(evaluate(&net, data, val_idx)?);
    }
    Ok(reports)
}

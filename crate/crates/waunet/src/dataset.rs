//! Phantom dataset directories: generation, train/val/test splitting, and
//! loading.
//!
//! Layout: `case_{idx:04}_img.wtf1` (f32 `[1,H,W]`), `case_{idx:04}_lbl.wtf1`
//! (u8 `[H,W]`), plus `manifest.json` holding the generation spec, seed,
//! split assignment and class names. Cases enumerate in lexicographic file
//! order, which the zero-padded index makes equal to numeric order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use waunet_core::metrics::LabelMap;
use waunet_core::phantom::{center_crop, generate_phantom, PhantomSpec};
use waunet_core::rng::stream_rng;
use waunet_core::Tensor;

use crate::error::{AppError, Result};
use crate::wtf1::{self, Wtf1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AppError::Usage(format!(
                "unknown split {other:?}; expected train, val or test"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Generation parameters; `spec.seed` is the base seed, case `i` uses
    /// `seed + i`.
    pub spec: PhantomSpec,
    pub cases: usize,
    /// Image size after the optional center crop.
    pub size: usize,
    pub ratios: (f64, f64, f64),
    pub split_seed: u64,
    pub spacing: (f64, f64),
    pub class_names: Vec<String>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len() + 1
    }

    pub fn indices(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Floor each split count, then hand the remainder to the training split.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (rt, rv, rs) = ratios;
    if rt < 0.0 || rv < 0.0 || rs < 0.0 || (rt + rv + rs - 1.0).abs() > 1e-9 {
        return Err(AppError::Usage(format!(
            "split ratios must be non-negative and sum to 1, got {ratios:?}"
        )));
    }
    let n_train = (n as f64 * rt).floor() as usize;
    let n_val = (n as f64 * rv).floor() as usize;
    let n_test = (n as f64 * rs).floor() as usize;
    let rem = n - n_train - n_val - n_test;
    Ok((n_train + rem, n_val, n_test))
}

/// Seeded shuffle split into disjoint, covering index sets.
pub fn split_indices(
    n: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (n_train, n_val, _) = split_counts(n, ratios)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0);
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

fn case_img_name(idx: usize) -> String {
    format!("case_{idx:04}_img.wtf1")
}

fn case_lbl_name(idx: usize) -> String {
    format!("case_{idx:04}_lbl.wtf1")
}

pub struct GenOptions {
    /// Base spec; per-case seeds derive from `spec.seed`.
    pub spec: PhantomSpec,
    pub cases: usize,
    /// Final size; when `spec.size` is larger the pair is center-cropped.
    pub size: usize,
    pub ratios: (f64, f64, f64),
    pub spacing: (f64, f64),
    pub force: bool,
}

/// Writes a dataset directory. Rerunning with identical options produces
/// identical bytes.
pub fn generate_dataset(dir: &Path, opts: &GenOptions) -> Result<DatasetManifest> {
    if opts.cases == 0 {
        return Err(AppError::Usage("gen: --cases must be >= 1".into()));
    }
    if opts.size > opts.spec.size {
        return Err(AppError::Usage(format!(
            "gen: final size {} exceeds generation size {}",
            opts.size, opts.spec.size
        )));
    }
    if dir.exists() {
        let occupied = fs::read_dir(dir)
            .map_err(|e| AppError::io(dir, e))?
            .next()
            .is_some();
        if occupied && !opts.force {
            return Err(AppError::Usage(format!(
                "gen: output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;

    let (train, val, test) = split_indices(opts.cases, opts.ratios, opts.spec.seed)?;
    let manifest = DatasetManifest {
        spec: opts.spec.clone(),
        cases: opts.cases,
        size: opts.size,
        ratios: opts.ratios,
        split_seed: opts.spec.seed,
        spacing: opts.spacing,
        class_names: opts.spec.recipes.iter().map(|r| r.name.clone()).collect(),
        train,
        val,
        test,
    };

    for idx in 0..opts.cases {
        let mut spec = opts.spec.clone();
        spec.seed = opts.spec.seed + idx as u64;
        let (mut image, mut labels) = generate_phantom(&spec)?;
        if opts.size < spec.size {
            let (ci, cl) = center_crop(&image, &labels, opts.size)?;
            image = ci;
            labels = cl;
        }
        wtf1::write(&dir.join(case_img_name(idx)), &Wtf1::F32(image))?;
        wtf1::write(
            &dir.join(case_lbl_name(idx)),
            &Wtf1::U8 {
                shape: vec![labels.height(), labels.width()],
                data: labels.data().to_vec(),
            },
        )?;
    }

    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AppError::Runtime(format!("manifest serialization: {e}")))?;
    fs::write(&manifest_path, json).map_err(|e| AppError::io(&manifest_path, e))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Case {
    pub image: Tensor<f32>,
    pub labels: LabelMap,
}

pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
    pub cases: Vec<Case>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).map_err(|e| AppError::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| AppError::format(&manifest_path, e.to_string()))?;

        let mut cases = Vec::with_capacity(manifest.cases);
        for idx in 0..manifest.cases {
            let img_path = dir.join(case_img_name(idx));
            let image = match wtf1::read(&img_path)? {
                Wtf1::F32(t) if t.rank() == 3 && t.shape()[0] == 1 => t,
                other => {
                    return Err(AppError::format(
                        &img_path,
                        format!("expected f32 [1,H,W] image, got {:?}", other.shape()),
                    ))
                }
            };
            let lbl_path = dir.join(case_lbl_name(idx));
            let labels = match wtf1::read(&lbl_path)? {
                Wtf1::U8 { shape, data } if shape.len() == 2 => {
                    let map = LabelMap::new(shape[0], shape[1], data, manifest.spacing)
                        .map_err(AppError::Core)?;
                    if map.max_class() as usize >= manifest.num_classes() {
                        return Err(AppError::format(
                            &lbl_path,
                            format!(
                                "class id {} outside [0, {})",
                                map.max_class(),
                                manifest.num_classes()
                            ),
                        ));
                    }
                    map
                }
                other => {
                    return Err(AppError::format(
                        &lbl_path,
                        format!("expected u8 [H,W] labels, got {:?}", other.shape()),
                    ))
                }
            };
            if image.shape()[1] != labels.height() || image.shape()[2] != labels.width() {
                return Err(AppError::format(
                    &img_path,
                    "image and label extents disagree",
                ));
            }
            cases.push(Case { image, labels });
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
            cases,
        })
    }

    pub fn split(&self, split: Split) -> &[usize] {
        self.manifest.indices(split)
    }

    /// The split to evaluate when one is empty: prefer the requested one,
    /// fall back to all cases.
    pub fn split_or_all(&self, split: Split) -> Vec<usize> {
        let s = self.split(split);
        if s.is_empty() {
            (0..self.cases.len()).collect()
        } else {
            s.to_vec()
        }
    }
}

//! Synthetic multi-organ phantom slices, plus the center-crop and
//! augmentation pipeline.
//!
//! Each phantom is a grayscale image in `[0,1]` with a matching label map.
//! Classes are painted in recipe order onto background pixels only, so organ
//! regions are disjoint by construction; a painted class whose pixel count
//! falls outside its recipe band is resampled, and after bounded retries the
//! whole case is regenerated on a fresh RNG stream.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::LabelMap;
use crate::rng::stream_rng;
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Flat background intensity before noise.
pub const BACKGROUND_INTENSITY: f64 = 0.30;

const MAX_SHAPE_RETRIES: usize = 64;
const MAX_CASE_RETRIES: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ShapeKind {
    /// Axis-aligned ellipse; `param` is the row/col aspect ratio.
    Ellipse,
    /// Two ellipses mirrored about the vertical midline; `param` is the
    /// lateral offset from the midline as a fraction of size.
    PairedEllipses,
    /// Vertical bar; `radius` is the half-width, `param` the half-height.
    VerticalStrip,
    /// Horizontal bar; `radius` is the half-height, `param` the half-width.
    HorizontalStrip,
    /// Annulus; `param` is the inner/outer radius ratio.
    Ring,
}

/// How one organ class is painted.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OrganRecipe {
    pub name: String,
    pub kind: ShapeKind,
    /// Anchor center as a fraction of the image size (row, col).
    pub anchor: (f64, f64),
    /// Uniform center jitter radius, fraction of size.
    pub jitter: f64,
    /// Intensity band the class is drawn from.
    pub intensity: (f64, f64),
    /// Accepted painted-area band as a fraction of the image area.
    pub area_frac: (f64, f64),
    /// Characteristic radius range, fraction of size (meaning per kind).
    pub radius: (f64, f64),
    /// Secondary geometry parameter (meaning per kind).
    pub param: f64,
}

impl OrganRecipe {
    /// Accepted painted pixel count at a given image size.
    pub fn area_px(&self, size: usize) -> (usize, usize) {
        let area = (size * size) as f64;
        let lo = (self.area_frac.0 * area).floor().max(1.0) as usize;
        let hi = (self.area_frac.1 * area).ceil() as usize;
        (lo, hi)
    }

    /// Area at most 2% of the image and contrast at most 0.1 against the
    /// background (optic-chiasm-like difficulty).
    pub fn is_small_low_contrast(&self) -> bool {
        let c0 = (self.intensity.0 - BACKGROUND_INTENSITY).abs();
        let c1 = (self.intensity.1 - BACKGROUND_INTENSITY).abs();
        self.area_frac.1 <= 0.02 && c0.max(c1) <= 0.1
    }

    /// Contrast at least 0.5 against background (mandible-like).
    pub fn is_large_high_contrast(&self) -> bool {
        let c0 = (self.intensity.0 - BACKGROUND_INTENSITY).abs();
        let c1 = (self.intensity.1 - BACKGROUND_INTENSITY).abs();
        c0.min(c1) >= 0.5 && self.area_frac.0 >= 0.04
    }
}

/// The built-in recipe table: class ids are assigned in order, starting at 1.
/// Order 1..=10: bulk, chiasm, paired, cord, ring, pair2, plate, nub, ring2,
/// wedge. Any prefix of length >= 2 contains a large-high-contrast class
/// (class 1) and a small-low-contrast class (class 2).
pub fn default_recipes(num_organs: usize) -> Result<Vec<OrganRecipe>> {
    let r = |name: &str,
             kind: ShapeKind,
             anchor: (f64, f64),
             jitter: f64,
             intensity: (f64, f64),
             area_frac: (f64, f64),
             radius: (f64, f64),
             param: f64| OrganRecipe {
        name: String::from(name),
        kind,
        anchor,
        jitter,
        intensity,
        area_frac,
        radius,
        param,
    };
    let table = alloc::vec![
        r("bulk", ShapeKind::Ellipse, (0.30, 0.32), 0.04, (0.85, 0.95), (0.050, 0.150), (0.16, 0.22), 1.2),
        r("chiasm", ShapeKind::Ellipse, (0.32, 0.78), 0.03, (0.355, 0.395), (0.003, 0.0185), (0.045, 0.065), 1.0),
        r("paired", ShapeKind::PairedEllipses, (0.70, 0.50), 0.03, (0.55, 0.65), (0.012, 0.048), (0.055, 0.075), 0.28),
        r("cord", ShapeKind::VerticalStrip, (0.72, 0.50), 0.02, (0.10, 0.18), (0.012, 0.055), (0.030, 0.045), 0.16),
        r("ring", ShapeKind::Ring, (0.10, 0.70), 0.02, (0.70, 0.80), (0.004, 0.030), (0.050, 0.070), 0.5),
        r("pair2", ShapeKind::PairedEllipses, (0.12, 0.50), 0.02, (0.45, 0.52), (0.006, 0.030), (0.035, 0.050), 0.35),
        r("plate", ShapeKind::HorizontalStrip, (0.92, 0.30), 0.015, (0.60, 0.70), (0.008, 0.040), (0.020, 0.030), 0.12),
        r("nub", ShapeKind::Ellipse, (0.55, 0.08), 0.02, (0.75, 0.85), (0.004, 0.025), (0.040, 0.060), 1.0),
        r("ring2", ShapeKind::Ring, (0.88, 0.80), 0.015, (0.48, 0.55), (0.003, 0.025), (0.040, 0.060), 0.45),
        r("wedge", ShapeKind::Ellipse, (0.50, 0.90), 0.02, (0.05, 0.15), (0.005, 0.030), (0.050, 0.070), 1.4),
    ];
    if num_organs == 0 || num_organs > table.len() {
        return Err(Error::Config(format!(
            "num_organs must be in 1..={}, got {num_organs}",
            table.len()
        )));
    }
    Ok(table.into_iter().take(num_organs).collect())
}

/// Generation parameters for one phantom case.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub recipes: Vec<OrganRecipe>,
}

impl PhantomSpec {
    /// Desk-scale default: 4 organs.
    pub fn desk(size: usize, seed: u64) -> Self {
        PhantomSpec {
            size,
            seed,
            noise_std: 0.02,
            recipes: default_recipes(4).expect("4 <= table size"),
        }
    }

    pub fn with_organs(size: usize, num_organs: usize, seed: u64) -> Result<Self> {
        Ok(PhantomSpec {
            size,
            seed,
            noise_std: 0.02,
            recipes: default_recipes(num_organs)?,
        })
    }

    pub fn num_organs(&self) -> usize {
        self.recipes.len()
    }

    /// Classes including background.
    pub fn num_classes(&self) -> usize {
        self.recipes.len() + 1
    }
}

/// Candidate pixels of one sampled shape, unclipped.
fn shape_pixels<R: Rng>(
    recipe: &OrganRecipe,
    size: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let s = size as f64;
    let jitter = recipe.jitter * s;
    let mut jit = |anchor: f64| -> f64 {
        let base = anchor * s;
        if jitter > 0.0 {
            base + rng.gen_range(-jitter..jitter)
        } else {
            base
        }
    };
    let cr = jit(recipe.anchor.0);
    let cc = jit(recipe.anchor.1);
    let radius = rng.gen_range(recipe.radius.0..recipe.radius.1) * s;

    let mut pixels = Vec::new();
    let push_ellipse = |cy: f64, cx: f64, a: f64, b: f64, pixels: &mut Vec<(usize, usize)>| {
        let (r0, r1) = ((cy - a).floor().max(0.0) as usize, (cy + a).ceil() as usize);
        let (c0, c1) = ((cx - b).floor().max(0.0) as usize, (cx + b).ceil() as usize);
        for r in r0..=r1.min(size - 1) {
            for c in c0..=c1.min(size - 1) {
                let dy = (r as f64 - cy) / a;
                let dx = (c as f64 - cx) / b;
                if dy * dy + dx * dx <= 1.0 {
                    pixels.push((r, c));
                }
            }
        }
    };

    match recipe.kind {
        ShapeKind::Ellipse => {
            let a = radius;
            let b = radius / recipe.param;
            push_ellipse(cr, cc, a, b, &mut pixels);
        }
        ShapeKind::PairedEllipses => {
            let off = recipe.param * s;
            push_ellipse(cr, cc - off, radius, radius, &mut pixels);
            push_ellipse(cr, cc + off, radius, radius, &mut pixels);
        }
        ShapeKind::VerticalStrip => {
            let half_w = radius;
            let half_h = recipe.param * s;
            let (r0, r1) = ((cr - half_h).ceil().max(0.0) as usize, (cr + half_h).floor() as usize);
            let (c0, c1) = ((cc - half_w).ceil().max(0.0) as usize, (cc + half_w).floor() as usize);
            for r in r0..=r1.min(size - 1) {
                for c in c0..=c1.min(size - 1) {
                    pixels.push((r, c));
                }
            }
        }
        ShapeKind::HorizontalStrip => {
            let half_h = radius;
            let half_w = recipe.param * s;
            let (r0, r1) = ((cr - half_h).ceil().max(0.0) as usize, (cr + half_h).floor() as usize);
            let (c0, c1) = ((cc - half_w).ceil().max(0.0) as usize, (cc + half_w).floor() as usize);
            for r in r0..=r1.min(size - 1) {
                for c in c0..=c1.min(size - 1) {
                    pixels.push((r, c));
                }
            }
        }
        ShapeKind::Ring => {
            let outer = radius;
            let inner = radius * recipe.param;
            let (r0, r1) = ((cr - outer).floor().max(0.0) as usize, (cr + outer).ceil() as usize);
            let (c0, c1) = ((cc - outer).floor().max(0.0) as usize, (cc + outer).ceil() as usize);
            for r in r0..=r1.min(size - 1) {
                for c in c0..=c1.min(size - 1) {
                    let dy = r as f64 - cr;
                    let dx = c as f64 - cc;
                    let d2 = dy * dy + dx * dx;
                    if d2 <= outer * outer && d2 >= inner * inner {
                        pixels.push((r, c));
                    }
                }
            }
        }
    }
    pixels
}

/// Generates one phantom: grayscale image `[1,H,W]` in `[0,1]` and its label
/// map. Deterministic in `spec.seed`.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(Tensor<f32>, LabelMap)> {
    if spec.size < 16 {
        return Err(Error::Config(format!(
            "phantom size must be >= 16, got {}",
            spec.size
        )));
    }
    if spec.recipes.is_empty() || spec.recipes.len() > 255 {
        return Err(Error::Config("need 1..=255 organ recipes".into()));
    }
    let size = spec.size;

    'case: for attempt in 0..MAX_CASE_RETRIES {
        let mut rng = stream_rng(spec.seed, attempt);
        let mut labels = LabelMap::zeros(size, size, (1.0, 1.0));

        for (i, recipe) in spec.recipes.iter().enumerate() {
            let class = (i + 1) as u8;
            let (lo, hi) = recipe.area_px(size);
            let mut placed = false;
            for _ in 0..MAX_SHAPE_RETRIES {
                let candidates = shape_pixels(recipe, size, &mut rng);
                let free: Vec<(usize, usize)> = candidates
                    .into_iter()
                    .filter(|&(r, c)| labels.get(r, c) == 0)
                    .collect();
                if free.len() >= lo && free.len() <= hi {
                    for &(r, c) in &free {
                        labels.set(r, c, class);
                    }
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'case;
            }
        }

        // intensities: one draw per class, then additive Gaussian noise
        let mut image = alloc::vec![BACKGROUND_INTENSITY as f32; size * size];
        for (i, recipe) in spec.recipes.iter().enumerate() {
            let class = (i + 1) as u8;
            let level = rng.gen_range(recipe.intensity.0..recipe.intensity.1) as f32;
            for (px, &lab) in image.iter_mut().zip(labels.data().iter()) {
                if lab == class {
                    *px = level;
                }
            }
        }
        if spec.noise_std > 0.0 {
            let normal = Normal::new(0.0f64, spec.noise_std)
                .map_err(|_| Error::Config("invalid noise_std".into()))?;
            for px in image.iter_mut() {
                *px = Float::min(Float::max(*px + normal.sample(&mut rng) as f32, 0.0), 1.0);
            }
        }
        let image = Tensor::from_vec(alloc::vec![1, size, size], image)?;
        return Ok((image, labels));
    }
    Err(Error::Generation(format!(
        "could not satisfy phantom recipes at size {size} after {MAX_CASE_RETRIES} attempts"
    )))
}

/// Symmetric center crop. When the margin is odd the kept window sits one
/// pixel toward the top-left.
pub fn center_crop<T: Scalar>(
    image: &Tensor<T>,
    labels: &LabelMap,
    target: usize,
) -> Result<(Tensor<T>, LabelMap)> {
    let (h, w) = (labels.height(), labels.width());
    if image.shape() != [1, h, w] {
        return Err(Error::Shape(format!(
            "center_crop: image {:?} does not match labels {h}x{w}",
            image.shape()
        )));
    }
    if target == 0 || target > h || target > w {
        return Err(Error::Shape(format!(
            "center_crop: target {target} exceeds source {h}x{w}"
        )));
    }
    let off_r = (h - target) / 2;
    let off_c = (w - target) / 2;
    let mut img = Vec::with_capacity(target * target);
    let mut lab = Vec::with_capacity(target * target);
    for r in 0..target {
        for c in 0..target {
            img.push(image.data()[(off_r + r) * w + (off_c + c)]);
            lab.push(labels.get(off_r + r, off_c + c));
        }
    }
    Ok((
        Tensor::from_vec(alloc::vec![1, target, target], img)?,
        LabelMap::new(target, target, lab, labels.spacing())?,
    ))
}

/// Augmentation magnitude bounds; draws are deterministic in `seed`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AugmentParams {
    /// Maximum |shift| per axis, in pixels.
    pub max_shift: f64,
    /// Maximum |rotation|, degrees.
    pub max_rotation_deg: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub seed: u64,
}

impl AugmentParams {
    /// Shift up to 10% of `size`, rotation up to 15 degrees, both flips.
    pub fn standard(size: usize, seed: u64) -> Self {
        AugmentParams {
            max_shift: 0.1 * size as f64,
            max_rotation_deg: 15.0,
            flip_h: true,
            flip_v: true,
            seed,
        }
    }
}

/// A concrete geometric transform: flips, then rotation about the image
/// center, then translation. Positive angles rotate (row, col) offsets by the
/// matrix [[cos, -sin], [sin, cos]].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub angle_deg: f64,
    /// (rows, cols)
    pub shift: (f64, f64),
    pub flip_h: bool,
    pub flip_v: bool,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        angle_deg: 0.0,
        shift: (0.0, 0.0),
        flip_h: false,
        flip_v: false,
    };
}

/// Draws a transform from the parameter bounds. Draw order is fixed: flip_h,
/// flip_v, angle, row shift, col shift.
pub fn sample_transform<R: Rng>(params: &AugmentParams, rng: &mut R) -> Transform {
    let flip_h = params.flip_h && rng.gen_bool(0.5);
    let flip_v = params.flip_v && rng.gen_bool(0.5);
    let angle_deg = if params.max_rotation_deg > 0.0 {
        rng.gen_range(-params.max_rotation_deg..params.max_rotation_deg)
    } else {
        0.0
    };
    let mut shift = (0.0, 0.0);
    if params.max_shift > 0.0 {
        shift.0 = rng.gen_range(-params.max_shift..params.max_shift);
        shift.1 = rng.gen_range(-params.max_shift..params.max_shift);
    }
    Transform {
        angle_deg,
        shift,
        flip_h,
        flip_v,
    }
}

/// Applies one transform to an image/label pair: bilinear resampling for the
/// image, nearest-neighbor for the labels, background fill outside the frame.
/// Pure flips take an exact index-remap path, so a repeated flip is a
/// bit-exact involution.
pub fn apply_transform<T: Scalar>(
    image: &Tensor<T>,
    labels: &LabelMap,
    t: &Transform,
) -> Result<(Tensor<T>, LabelMap)> {
    let (h, w) = (labels.height(), labels.width());
    if image.shape() != [1, h, w] {
        return Err(Error::Shape(format!(
            "apply_transform: image {:?} does not match labels {h}x{w}",
            image.shape()
        )));
    }

    if t.angle_deg == 0.0 && t.shift == (0.0, 0.0) {
        // exact path: index remap only
        let mut img = image.data().to_vec();
        let mut lab = labels.data().to_vec();
        if t.flip_h {
            for r in 0..h {
                img[r * w..(r + 1) * w].reverse();
                lab[r * w..(r + 1) * w].reverse();
            }
        }
        if t.flip_v {
            for r in 0..h / 2 {
                for c in 0..w {
                    img.swap(r * w + c, (h - 1 - r) * w + c);
                    lab.swap(r * w + c, (h - 1 - r) * w + c);
                }
            }
        }
        return Ok((
            Tensor::from_vec(alloc::vec![1, h, w], img)?,
            LabelMap::new(h, w, lab, labels.spacing())?,
        ));
    }

    let angle = t.angle_deg.to_radians();
    let (sin, cos) = (angle.sin(), angle.cos());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let img_src = image.data();
    let mut img = alloc::vec![T::zero(); h * w];
    let mut lab = alloc::vec![0u8; h * w];

    for r in 0..h {
        for c in 0..w {
            // invert: undo shift, undo rotation, undo flips
            let or = r as f64 - t.shift.0 - cy;
            let oc = c as f64 - t.shift.1 - cx;
            let mut sr = cos * or + sin * oc + cy;
            let mut sc = -sin * or + cos * oc + cx;
            if t.flip_h {
                sc = w as f64 - 1.0 - sc;
            }
            if t.flip_v {
                sr = h as f64 - 1.0 - sr;
            }

            // nearest neighbor for the label
            let nr = sr.round();
            let nc = sc.round();
            let dst = r * w + c;
            if nr >= 0.0 && nr < h as f64 && nc >= 0.0 && nc < w as f64 {
                lab[dst] = labels.get(nr as usize, nc as usize);
            }

            // bilinear for the image, zero fill off-frame
            let r0 = sr.floor();
            let c0 = sc.floor();
            let fr = sr - r0;
            let fc = sc - c0;
            let sample = |ri: f64, ci: f64| -> f64 {
                if ri < 0.0 || ci < 0.0 || ri >= h as f64 || ci >= w as f64 {
                    0.0
                } else {
                    img_src[ri as usize * w + ci as usize].as_f64()
                }
            };
            let v = sample(r0, c0) * (1.0 - fr) * (1.0 - fc)
                + sample(r0, c0 + 1.0) * (1.0 - fr) * fc
                + sample(r0 + 1.0, c0) * fr * (1.0 - fc)
                + sample(r0 + 1.0, c0 + 1.0) * fr * fc;
            img[dst] = lit::<T>(v);
        }
    }
    Ok((
        Tensor::from_vec(alloc::vec![1, h, w], img)?,
        LabelMap::new(h, w, lab, labels.spacing())?,
    ))
}

/// Samples a transform from `params.seed` and applies it.
pub fn augment<T: Scalar>(
    image: &Tensor<T>,
    labels: &LabelMap,
    params: &AugmentParams,
) -> Result<(Tensor<T>, LabelMap)> {
    let mut rng = stream_rng(params.seed, 0);
    let t = sample_transform(params, &mut rng);
    apply_transform(image, labels, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec::desk(32, 41);
        let (img1, lab1) = generate_phantom(&spec).unwrap();
        let (img2, lab2) = generate_phantom(&spec).unwrap();
        assert_eq!(img1, img2);
        assert_eq!(lab1, lab2);
    }

    #[test]
    fn noiseless_single_ellipse_is_exactly_two_level() {
        let spec = PhantomSpec {
            size: 32,
            seed: 7,
            noise_std: 0.0,
            recipes: default_recipes(1).unwrap(),
        };
        let (img, lab) = generate_phantom(&spec).unwrap();
        for (px, &l) in img.data().iter().zip(lab.data().iter()) {
            if l == 0 {
                assert_eq!(*px, BACKGROUND_INTENSITY as f32);
            } else {
                assert!(*px >= 0.85 && *px < 0.95);
            }
        }
        assert!(lab.count_class(1) > 0);
    }

    #[test]
    fn every_class_present_and_disjoint_regions() {
        for seed in 0..20 {
            let spec = PhantomSpec::desk(32, seed);
            let (_, lab) = generate_phantom(&spec).unwrap();
            for class in 1..=4u8 {
                assert!(lab.count_class(class) > 0, "seed {seed} class {class}");
            }
        }
    }

    #[test]
    fn class_areas_fall_inside_recipe_bands_over_100_seeds() {
        for seed in 0..100 {
            let spec = PhantomSpec::desk(32, seed);
            let (_, lab) = generate_phantom(&spec).unwrap();
            for (i, recipe) in spec.recipes.iter().enumerate() {
                let count = lab.count_class((i + 1) as u8);
                let (lo, hi) = recipe.area_px(32);
                assert!(
                    count >= lo && count <= hi,
                    "seed {seed} class {} count {count} outside [{lo},{hi}]",
                    recipe.name
                );
            }
        }
    }

    #[test]
    fn desk_recipes_cover_difficulty_extremes() {
        let recipes = default_recipes(4).unwrap();
        assert!(recipes[0].is_large_high_contrast());
        assert!(recipes[1].is_small_low_contrast());
    }

    #[test]
    fn ten_organ_phantom_generates_at_64() {
        let spec = PhantomSpec::with_organs(64, 10, 3).unwrap();
        let (_, lab) = generate_phantom(&spec).unwrap();
        for class in 1..=10u8 {
            assert!(lab.count_class(class) > 0, "class {class}");
        }
    }

    #[test]
    fn center_crop_identity_and_offsets() {
        let spec = PhantomSpec::desk(32, 9);
        let (img, lab) = generate_phantom(&spec).unwrap();
        let (ci, cl) = center_crop(&img, &lab, 32).unwrap();
        assert_eq!(ci, img);
        assert_eq!(cl, lab);

        // 6 -> 4 keeps rows/cols 1..=4
        let img6 = Tensor::<f32>::from_vec(
            alloc::vec![1, 6, 6],
            (0..36).map(|i| i as f32).collect(),
        )
        .unwrap();
        let lab6 = LabelMap::new(6, 6, (0..36).map(|i| (i % 5) as u8).collect(), (1.0, 1.0))
            .unwrap();
        let (ci, cl) = center_crop(&img6, &lab6, 4).unwrap();
        assert_eq!(ci.data()[0], 7.0); // row 1, col 1
        assert_eq!(cl.get(0, 0), (7 % 5) as u8);
        assert_eq!(ci.data()[15], 28.0); // row 4, col 4
        assert!(center_crop(&img6, &lab6, 7).is_err());
    }

    #[test]
    fn zero_parameter_augment_is_identity() {
        let spec = PhantomSpec::desk(32, 5);
        let (img, lab) = generate_phantom(&spec).unwrap();
        let params = AugmentParams {
            max_shift: 0.0,
            max_rotation_deg: 0.0,
            flip_h: false,
            flip_v: false,
            seed: 1,
        };
        let (img2, lab2) = augment(&img, &lab, &params).unwrap();
        assert_eq!(img, img2);
        assert_eq!(lab, lab2);
    }

    #[test]
    fn horizontal_flip_twice_is_bit_exact_identity() {
        let spec = PhantomSpec::desk(32, 6);
        let (img, lab) = generate_phantom(&spec).unwrap();
        let t = Transform {
            flip_h: true,
            ..Transform::IDENTITY
        };
        let (i1, l1) = apply_transform(&img, &lab, &t).unwrap();
        let (i2, l2) = apply_transform(&i1, &l1, &t).unwrap();
        assert_eq!(img, i2);
        assert_eq!(lab, l2);
    }

    #[test]
    fn rotation_by_90_degrees_moves_single_pixel_to_rotated_coordinate() {
        // odd size keeps the center on a pixel
        let size = 9;
        let mut lab = LabelMap::zeros(size, size, (1.0, 1.0));
        lab.set(2, 6, 1); // offset from center (4,4): (-2, +2)
        let img = Tensor::<f32>::zeros(&[1, size, size]);
        let t = Transform {
            angle_deg: 90.0,
            ..Transform::IDENTITY
        };
        let (_, rotated) = apply_transform(&img, &lab, &t).unwrap();
        // forward: offset (or,oc) -> (-oc, or): (-2,2) -> (-2,-2), i.e. (2,2)
        assert_eq!(rotated.get(2, 2), 1);
        assert_eq!(rotated.count_class(1), 1);
    }

    #[test]
    fn nearest_neighbor_labels_never_invent_classes() {
        let spec = PhantomSpec::desk(32, 8);
        let (img, lab) = generate_phantom(&spec).unwrap();
        let t = Transform {
            angle_deg: 33.0,
            shift: (1.7, -2.3),
            flip_h: true,
            flip_v: false,
        };
        let (_, out) = apply_transform(&img, &lab, &t).unwrap();
        for &c in out.data() {
            assert!(c <= 4);
        }
    }
}

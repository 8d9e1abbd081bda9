//! Segmentation metrics over 2D label maps with physical spacing: Dice
//! overlap, 95th-percentile symmetric Hausdorff distance, and mean surface
//! distance.
//!
//! Distance metrics operate on 4-connectivity boundary pixels at pixel
//! centers, scaled to millimetres. When either region is empty the distance
//! metrics are undefined and reported as missing, never as a number.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};

/// Integer class id per pixel plus the physical pixel size in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
    /// (row_mm, col_mm)
    spacing: (f64, f64),
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>, spacing: (f64, f64)) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}x{width} expects {} pixels, got {}",
                height * width,
                data.len()
            )));
        }
        if spacing.0 <= 0.0 || spacing.1 <= 0.0 {
            return Err(Error::Config(format!(
                "spacing components must be positive, got {spacing:?}"
            )));
        }
        Ok(LabelMap {
            height,
            width,
            data,
            spacing,
        })
    }

    pub fn zeros(height: usize, width: usize, spacing: (f64, f64)) -> Self {
        LabelMap::new(height, width, vec![0; height * width], spacing)
            .expect("zero map is always valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, class: u8) {
        self.data[row * self.width + col] = class;
    }

    pub fn count_class(&self, class: u8) -> usize {
        self.data.iter().filter(|&&c| c == class).count()
    }

    pub fn max_class(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    fn check_comparable(&self, other: &LabelMap) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape(format!(
                "label maps differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::Shape(format!(
                "label map spacings differ: {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }
}

/// Boundary pixel centers of one class region, in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySet {
    /// (row_px, col_px) in pixels; mm coordinates are derived with spacing.
    pixels: Vec<(usize, usize)>,
    spacing: (f64, f64),
}

impl BoundarySet {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Points in millimetres.
    pub fn points_mm(&self) -> Vec<(f64, f64)> {
        self.pixels
            .iter()
            .map(|&(r, c)| (r as f64 * self.spacing.0, c as f64 * self.spacing.1))
            .collect()
    }
}

/// All pixels of `class` that touch the image border or have a 4-neighbor
/// outside the region.
pub fn extract_boundary(map: &LabelMap, class: u8) -> BoundarySet {
    let (h, w) = (map.height, map.width);
    let mut pixels = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if map.get(r, c) != class {
                continue;
            }
            let on_border = r == 0 || r == h - 1 || c == 0 || c == w - 1;
            let exposed = on_border
                || map.get(r - 1, c) != class
                || map.get(r + 1, c) != class
                || map.get(r, c - 1) != class
                || map.get(r, c + 1) != class;
            if exposed {
                pixels.push((r, c));
            }
        }
    }
    BoundarySet {
        pixels,
        spacing: map.spacing,
    }
}

/// Dice similarity coefficient `2|T∩P| / (|T|+|P|)`. Two empty regions count
/// as a perfect match.
pub fn dsc(truth: &LabelMap, pred: &LabelMap, class: u8) -> Result<f64> {
    truth.check_comparable(pred)?;
    let mut inter = 0usize;
    let mut t_count = 0usize;
    let mut p_count = 0usize;
    for (&t, &p) in truth.data.iter().zip(pred.data.iter()) {
        let (ti, pi) = (t == class, p == class);
        t_count += ti as usize;
        p_count += pi as usize;
        inter += (ti && pi) as usize;
    }
    if t_count + p_count == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (t_count + p_count) as f64)
}

/// Nearest-point query structure: boundary pixels bucketed by row so the
/// search can stop once the row offset alone exceeds the best distance.
struct RowIndex {
    /// Sorted, deduplicated rows with their column lists.
    rows: Vec<(usize, Vec<usize>)>,
    spacing: (f64, f64),
}

impl RowIndex {
    fn build(set: &BoundarySet) -> RowIndex {
        let mut rows: Vec<(usize, Vec<usize>)> = Vec::new();
        // boundary extraction emits pixels in row-major order
        for &(r, c) in &set.pixels {
            match rows.last_mut() {
                Some((row, cols)) if *row == r => cols.push(c),
                _ => rows.push((r, vec![c])),
            }
        }
        RowIndex {
            rows,
            spacing: set.spacing,
        }
    }

    /// Squared mm distance from pixel `(r, c)` to the nearest indexed pixel.
    fn nearest_sq(&self, r: usize, c: usize) -> f64 {
        let (sr, sc) = self.spacing;
        let start = self.rows.partition_point(|&(row, _)| row < r);
        let mut best = f64::INFINITY;
        let scan = |entry: &(usize, Vec<usize>)| -> f64 {
            let dr = (entry.0 as f64 - r as f64) * sr;
            let dr2 = dr * dr;
            let mut local = f64::INFINITY;
            for &col in &entry.1 {
                let dc = (col as f64 - c as f64) * sc;
                let d = dr2 + dc * dc;
                if d < local {
                    local = d;
                }
            }
            local
        };
        // walk upward and downward from the query row, pruning on row offset
        let (mut lo, mut hi) = (start, start);
        loop {
            let cand_up = lo.checked_sub(1).map(|i| {
                let dr = (self.rows[i].0 as f64 - r as f64) * sr;
                (i, dr * dr)
            });
            let cand_down = if hi < self.rows.len() {
                let dr = (self.rows[hi].0 as f64 - r as f64) * sr;
                Some((hi, dr * dr))
            } else {
                None
            };
            let next = match (cand_up, cand_down) {
                (Some((iu, du)), Some((id, dd))) => {
                    if du <= dd {
                        (iu, du, true)
                    } else {
                        (id, dd, false)
                    }
                }
                (Some((iu, du)), None) => (iu, du, true),
                (None, Some((id, dd))) => (id, dd, false),
                (None, None) => break,
            };
            if next.1 >= best {
                break;
            }
            let d = scan(&self.rows[next.0]);
            if d < best {
                best = d;
            }
            if next.2 {
                lo = next.0;
            } else {
                hi = next.0 + 1;
            }
        }
        best
    }
}

/// Minimum mm distance from every pixel of `from` to the set `to`.
fn directed_distances(from: &BoundarySet, to: &BoundarySet) -> Vec<f64> {
    let index = RowIndex::build(to);
    from.pixels
        .iter()
        .map(|&(r, c)| index.nearest_sq(r, c).sqrt())
        .collect()
}

/// 95th percentile with linear interpolation between the closest order
/// statistics (rank `0.95 * (n-1)`).
fn percentile_95(values: &mut [f64]) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = 0.95 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 >= values.len() {
        values[values.len() - 1]
    } else {
        values[lo] + frac * (values[lo + 1] - values[lo])
    }
}

/// Symmetric 95th-percentile Hausdorff distance in millimetres.
/// `Ok(None)` when either region is empty (undefined, excluded upstream).
pub fn hd95(truth: &LabelMap, pred: &LabelMap, class: u8) -> Result<Option<f64>> {
    truth.check_comparable(pred)?;
    let bt = extract_boundary(truth, class);
    let bp = extract_boundary(pred, class);
    if bt.is_empty() || bp.is_empty() {
        return Ok(None);
    }
    let mut d_pt = directed_distances(&bp, &bt);
    let mut d_tp = directed_distances(&bt, &bp);
    let p1 = percentile_95(&mut d_pt);
    let p2 = percentile_95(&mut d_tp);
    Ok(Some(p1.max(p2)))
}

/// Mean surface distance in millimetres, symmetrized over both boundaries.
/// `Ok(None)` when either region is empty.
pub fn msd(truth: &LabelMap, pred: &LabelMap, class: u8) -> Result<Option<f64>> {
    truth.check_comparable(pred)?;
    let bt = extract_boundary(truth, class);
    let bp = extract_boundary(pred, class);
    if bt.is_empty() || bp.is_empty() {
        return Ok(None);
    }
    let d_pt = directed_distances(&bp, &bt);
    let d_tp = directed_distances(&bt, &bp);
    let total: f64 = d_pt.iter().sum::<f64>() + d_tp.iter().sum::<f64>();
    Ok(Some(total / (d_pt.len() + d_tp.len()) as f64))
}

/// Mean and sample standard deviation; a single observation has std 0.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn stats(values: &[f64]) -> Option<Stats> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    Some(Stats { mean, std, n })
}

/// Per-class aggregate over a set of evaluation cases.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassRow {
    pub class_id: u8,
    pub name: String,
    /// DSC over all cases (always defined; empty-empty pairs score 1).
    pub dsc: Stats,
    /// Distance stats over the cases where both regions are non-empty;
    /// `None` when no case qualifies (row flagged).
    pub hd95: Option<Stats>,
    pub msd: Option<Stats>,
    /// Cases with both regions present (distance metrics defined).
    pub n_valid: usize,
    /// Cases excluded from the distance metrics.
    pub n_undefined: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    pub rows: Vec<ClassRow>,
}

impl MetricReport {
    /// Mean DSC across all foreground classes.
    pub fn mean_foreground_dsc(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.dsc.mean).sum::<f64>() / self.rows.len() as f64
    }

    pub fn row(&self, class_id: u8) -> Option<&ClassRow> {
        self.rows.iter().find(|r| r.class_id == class_id)
    }
}

/// Evaluates DSC/HD95/MSD for every foreground class `1..num_classes` over
/// paired (truth, prediction) cases. Undefined distance cases are excluded
/// from the distance statistics and counted per class.
pub fn metric_report(
    cases: &[(&LabelMap, &LabelMap)],
    num_classes: usize,
    class_names: &[String],
) -> Result<MetricReport> {
    if num_classes < 2 {
        return Err(Error::Config("metric report needs num_classes >= 2".into()));
    }
    if class_names.len() != num_classes - 1 {
        return Err(Error::Config(format!(
            "expected {} foreground class names, got {}",
            num_classes - 1,
            class_names.len()
        )));
    }
    let mut rows = Vec::new();
    for class in 1..num_classes {
        let class = class as u8;
        let mut dscs = Vec::new();
        let mut hd95s = Vec::new();
        let mut msds = Vec::new();
        let mut undefined = 0usize;
        for &(truth, pred) in cases {
            dscs.push(dsc(truth, pred, class)?);
            match (hd95(truth, pred, class)?, msd(truth, pred, class)?) {
                (Some(h), Some(m)) => {
                    hd95s.push(h);
                    msds.push(m);
                }
                _ => undefined += 1,
            }
        }
        rows.push(ClassRow {
            class_id: class,
            name: class_names[class as usize - 1].clone(),
            dsc: stats(&dscs).expect("cases is non-empty per class"),
            hd95: stats(&hd95s),
            msd: stats(&msds),
            n_valid: hd95s.len(),
            n_undefined: undefined,
        });
    }
    Ok(MetricReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, fg: &[(usize, usize)], class: u8) -> LabelMap {
        let mut m = LabelMap::zeros(h, w, (1.0, 1.0));
        for &(r, c) in fg {
            m.set(r, c, class);
        }
        m
    }

    #[test]
    fn dsc_identical_nonempty_masks() {
        let m = map(4, 4, &[(1, 1), (1, 2)], 1);
        assert_eq!(dsc(&m, &m, 1).unwrap(), 1.0);
    }

    #[test]
    fn dsc_disjoint_masks() {
        let a = map(4, 4, &[(0, 0)], 1);
        let b = map(4, 4, &[(3, 3)], 1);
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.0);
    }

    #[test]
    fn dsc_two_two_overlap_one() {
        let a = map(4, 4, &[(1, 1), (1, 2)], 1);
        let b = map(4, 4, &[(1, 2), (1, 3)], 1);
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.5);
    }

    #[test]
    fn dsc_both_empty_is_one() {
        let a = LabelMap::zeros(4, 4, (1.0, 1.0));
        assert_eq!(dsc(&a, &a, 3).unwrap(), 1.0);
    }

    #[test]
    fn boundary_of_full_image_is_border() {
        let m = LabelMap::new(4, 5, vec![1; 20], (1.0, 1.0)).unwrap();
        let b = extract_boundary(&m, 1);
        assert_eq!(b.len(), 2 * 5 + 2 * (4 - 2)); // perimeter pixels
    }

    #[test]
    fn boundary_of_single_pixel_is_that_pixel() {
        let m = map(5, 5, &[(2, 3)], 1);
        let b = extract_boundary(&m, 1);
        assert_eq!(b.points_mm(), vec![(2.0, 3.0)]);
    }

    #[test]
    fn boundary_of_3x3_square_excludes_center() {
        let mut fg = Vec::new();
        for r in 1..4 {
            for c in 1..4 {
                fg.push((r, c));
            }
        }
        let m = map(6, 6, &fg, 1);
        let b = extract_boundary(&m, 1);
        assert_eq!(b.len(), 8);
        assert!(!b.points_mm().contains(&(2.0, 2.0)));
    }

    #[test]
    fn hd95_identical_masks_is_zero() {
        let m = map(6, 6, &[(2, 2), (2, 3), (3, 2)], 1);
        assert_eq!(hd95(&m, &m, 1).unwrap(), Some(0.0));
    }

    #[test]
    fn hd95_single_pixels_three_columns_apart() {
        let a = map(6, 6, &[(2, 1)], 1);
        let b = map(6, 6, &[(2, 4)], 1);
        assert_eq!(hd95(&a, &b, 1).unwrap(), Some(3.0));
    }

    #[test]
    fn msd_single_pixels_four_rows_apart_with_spacing() {
        let mut a = LabelMap::zeros(8, 8, (1.5, 1.0));
        a.set(1, 3, 1);
        let mut b = LabelMap::zeros(8, 8, (1.5, 1.0));
        b.set(5, 3, 1);
        assert_eq!(msd(&a, &b, 1).unwrap(), Some(6.0));
    }

    #[test]
    fn empty_region_is_undefined_not_zero() {
        let empty = LabelMap::zeros(4, 4, (1.0, 1.0));
        let full = map(4, 4, &[(1, 1)], 1);
        assert_eq!(hd95(&empty, &full, 1).unwrap(), None);
        assert_eq!(msd(&full, &empty, 1).unwrap(), None);
        assert_eq!(hd95(&empty, &empty, 1).unwrap(), None);
    }

    #[test]
    fn report_single_case_has_zero_std() {
        let t = map(4, 4, &[(1, 1)], 1);
        let p = map(4, 4, &[(1, 1)], 1);
        let report =
            metric_report(&[(&t, &p)], 2, &[String::from("organ")]).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert_eq!(report.rows[0].dsc.std, 0.0);
        assert_eq!(report.rows[0].n_valid, 1);
    }

    #[test]
    fn report_two_value_statistics() {
        // DSC 0.8 and 1.0 -> mean 0.9, sample std sqrt(0.02) ~ 0.1414
        let s = stats(&[0.8, 1.0]).unwrap();
        assert!((s.mean - 0.9).abs() < 1e-12);
        assert!((s.std - 0.1414).abs() < 1e-3);
    }
}

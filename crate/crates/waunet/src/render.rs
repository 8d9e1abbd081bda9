//! Dependency-free raster output: binary PGM for grayscale, binary PPM for
//! color, a truth/prediction contour overlay, and the difference map
//! (agreement black, disagreements in class color).

use std::fs;
use std::path::Path;

use waunet_core::metrics::{extract_boundary, LabelMap};
use waunet_core::Tensor;

use crate::error::{AppError, Result};

/// Fixed palette for class ids; background (0) is black, ids cycle beyond 16.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 80, 60],
    [70, 160, 240],
    [90, 200, 90],
    [240, 200, 70],
    [170, 90, 220],
    [240, 140, 50],
    [70, 220, 210],
    [220, 100, 180],
    [150, 220, 60],
    [110, 110, 240],
    [240, 230, 120],
    [120, 230, 160],
    [230, 120, 120],
    [120, 170, 200],
    [200, 200, 200],
];

pub fn class_color(class: u8) -> [u8; 3] {
    if class == 0 {
        PALETTE[0]
    } else {
        PALETTE[1 + ((class as usize - 1) % (PALETTE.len() - 1))]
    }
}

fn to_gray(image: &Tensor<f32>) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match image.shape() {
        [1, h, w] => (*h, *w),
        [h, w] => (*h, *w),
        other => {
            return Err(AppError::Runtime(format!(
                "render: expected [1,H,W] or [H,W] image, got {other:?}"
            )))
        }
    };
    let gray: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok((h, w, gray))
}

/// Binary PGM (P5), 8-bit.
pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w, gray) = to_gray(image)?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&gray);
    fs::write(path, out).map_err(|e| AppError::io(path, e))
}

/// Binary PPM (P6), 8-bit RGB.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(AppError::Runtime(format!(
            "render: buffer is {} bytes for {width}x{height} RGB",
            rgb.len()
        )));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| AppError::io(path, e))
}

/// Label map rendered in class colors.
pub fn labels_rgb(labels: &LabelMap) -> Vec<u8> {
    labels
        .data()
        .iter()
        .flat_map(|&c| class_color(c))
        .collect()
}

/// Grayscale input with ground-truth boundaries in green, predicted
/// boundaries in red, agreement of both boundaries in yellow.
pub fn overlay_rgb(image: &Tensor<f32>, truth: &LabelMap, pred: &LabelMap) -> Result<Vec<u8>> {
    let (h, w, gray) = to_gray(image)?;
    let mut rgb: Vec<u8> = gray.iter().flat_map(|&g| [g, g, g]).collect();
    let num_classes = truth.max_class().max(pred.max_class());
    let mut truth_edge = vec![false; h * w];
    let mut pred_edge = vec![false; h * w];
    for class in 1..=num_classes {
        for (r, c) in boundary_pixels(truth, class) {
            truth_edge[r * w + c] = true;
        }
        for (r, c) in boundary_pixels(pred, class) {
            pred_edge[r * w + c] = true;
        }
    }
    for i in 0..h * w {
        match (truth_edge[i], pred_edge[i]) {
            (true, true) => rgb[3 * i..3 * i + 3].copy_from_slice(&[255, 235, 60]),
            (true, false) => rgb[3 * i..3 * i + 3].copy_from_slice(&[40, 220, 60]),
            (false, true) => rgb[3 * i..3 * i + 3].copy_from_slice(&[235, 50, 40]),
            (false, false) => {}
        }
    }
    Ok(rgb)
}

fn boundary_pixels(map: &LabelMap, class: u8) -> Vec<(usize, usize)> {
    let (sr, sc) = map.spacing();
    extract_boundary(map, class)
        .points_mm()
        .into_iter()
        .map(|(r, c)| ((r / sr).round() as usize, (c / sc).round() as usize))
        .collect()
}

/// Agreement (truth == prediction) is black; a disagreeing pixel keeps its
/// class color, taken from the truth when the truth is foreground and from
/// the prediction otherwise (a pure false positive).
pub fn difference_rgb(truth: &LabelMap, pred: &LabelMap) -> Result<Vec<u8>> {
    if truth.height() != pred.height() || truth.width() != pred.width() {
        return Err(AppError::Runtime(
            "difference map: label extents disagree".into(),
        ));
    }
    let mut rgb = Vec::with_capacity(truth.data().len() * 3);
    for (&t, &p) in truth.data().iter().zip(pred.data().iter()) {
        let color = if t == p {
            [0, 0, 0]
        } else if t != 0 {
            class_color(t)
        } else {
            class_color(p)
        };
        rgb.extend_from_slice(&color);
    }
    Ok(rgb)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_gives_all_black_difference_map() {
        let mut truth = LabelMap::zeros(8, 8, (1.0, 1.0));
        truth.set(2, 2, 1);
        truth.set(2, 3, 3);
        let rgb = difference_rgb(&truth, &truth).unwrap();
        assert!(rgb.iter().all(|&b| b == 0));
    }

    #[test]
    fn disagreements_keep_class_colors() {
        let mut truth = LabelMap::zeros(4, 4, (1.0, 1.0));
        truth.set(1, 1, 2); // false negative: truth color
        let mut pred = LabelMap::zeros(4, 4, (1.0, 1.0));
        pred.set(2, 2, 3); // false positive: prediction color
        let rgb = difference_rgb(&truth, &pred).unwrap();
        let at = |r: usize, c: usize| -> [u8; 3] {
            let i = (r * 4 + c) * 3;
            [rgb[i], rgb[i + 1], rgb[i + 2]]
        };
        assert_eq!(at(1, 1), class_color(2));
        assert_eq!(at(2, 2), class_color(3));
        assert_eq!(at(0, 0), [0, 0, 0]);
    }

    #[test]
    fn pgm_and_ppm_headers_are_wellformed() {
        let dir = tempfile::tempdir().unwrap();
        let img = Tensor::<f32>::full(&[1, 2, 3], 0.5);
        let p = dir.path().join("img.pgm");
        write_pgm(&p, &img).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), b"P5\n3 2\n255\n".len() + 6);

        let p = dir.path().join("img.ppm");
        write_ppm(&p, 3, 2, &[10u8; 18]).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert!(bytes.starts_with(b"P6\n3 2\n255\n"));
    }
}

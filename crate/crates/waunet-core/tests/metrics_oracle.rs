//! Distance metrics against an all-pairs brute-force oracle, plus the
//! symmetry, scale-covariance and translation-invariance suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use waunet_core::metrics::{dsc, extract_boundary, hd95, msd, LabelMap};

/// Brute force: all-pairs nearest distances and a direct percentile.
mod oracle {
    use super::*;

    pub fn boundary_points(map: &LabelMap, class: u8) -> Vec<(f64, f64)> {
        // independent definition: scan with explicit neighbor checks
        let (h, w) = (map.height(), map.width());
        let (sr, sc) = map.spacing();
        let mut pts = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if map.get(r, c) != class {
                    continue;
                }
                let mut exposed = r == 0 || r + 1 == h || c == 0 || c + 1 == w;
                if !exposed {
                    let neighbors = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)];
                    exposed = neighbors.iter().any(|&(rr, cc)| map.get(rr, cc) != class);
                }
                if exposed {
                    pts.push((r as f64 * sr, c as f64 * sc));
                }
            }
        }
        pts
    }

    fn directed(from: &[(f64, f64)], to: &[(f64, f64)]) -> Vec<f64> {
        from.iter()
            .map(|&(r, c)| {
                to.iter()
                    .map(|&(rr, cc)| ((r - rr).powi(2) + (c - cc).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn p95(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.total_cmp(b));
        let rank = 0.95 * (v.len() - 1) as f64;
        let lo = rank.floor() as usize;
        let frac = rank - lo as f64;
        if lo + 1 >= v.len() {
            v[v.len() - 1]
        } else {
            v[lo] + frac * (v[lo + 1] - v[lo])
        }
    }

    pub fn hd95(truth: &LabelMap, pred: &LabelMap, class: u8) -> Option<f64> {
        let bt = boundary_points(truth, class);
        let bp = boundary_points(pred, class);
        if bt.is_empty() || bp.is_empty() {
            return None;
        }
        Some(p95(directed(&bp, &bt)).max(p95(directed(&bt, &bp))))
    }

    pub fn msd(truth: &LabelMap, pred: &LabelMap, class: u8) -> Option<f64> {
        let bt = boundary_points(truth, class);
        let bp = boundary_points(pred, class);
        if bt.is_empty() || bp.is_empty() {
            return None;
        }
        let d1 = directed(&bp, &bt);
        let d2 = directed(&bt, &bp);
        let total: f64 = d1.iter().sum::<f64>() + d2.iter().sum::<f64>();
        Some(total / (d1.len() + d2.len()) as f64)
    }

    pub fn dsc(truth: &LabelMap, pred: &LabelMap, class: u8) -> f64 {
        let t: usize = truth.data().iter().filter(|&&c| c == class).count();
        let p: usize = pred.data().iter().filter(|&&c| c == class).count();
        let inter: usize = truth
            .data()
            .iter()
            .zip(pred.data().iter())
            .filter(|&(&a, &b)| a == class && b == class)
            .count();
        if t + p == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (t + p) as f64
        }
    }
}

/// Random blobby mask: a few rectangles and discs of one class.
fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, spacing: (f64, f64)) -> LabelMap {
    let mut m = LabelMap::zeros(h, w, spacing);
    let shapes = rng.gen_range(0..4);
    for _ in 0..shapes {
        if rng.gen_bool(0.5) {
            let r0 = rng.gen_range(0..h);
            let c0 = rng.gen_range(0..w);
            let rh = rng.gen_range(1..=h / 2);
            let cw = rng.gen_range(1..=w / 2);
            for r in r0..(r0 + rh).min(h) {
                for c in c0..(c0 + cw).min(w) {
                    m.set(r, c, 1);
                }
            }
        } else {
            let cr = rng.gen_range(0..h) as f64;
            let cc = rng.gen_range(0..w) as f64;
            let rad = rng.gen_range(1.0..(h.min(w) as f64) / 3.0);
            for r in 0..h {
                for c in 0..w {
                    let d = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    if d <= rad * rad {
                        m.set(r, c, 1);
                    }
                }
            }
        }
    }
    m
}

/// 200 random mask pairs up to 32x32: production implementations agree with
/// the all-pairs oracle within 1e-9.
#[test]
fn distance_metrics_match_all_pairs_oracle_on_200_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut compared = 0usize;
    for case in 0..200 {
        let h = rng.gen_range(4..=32);
        let w = rng.gen_range(4..=32);
        let spacing = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
        let truth = random_mask(&mut rng, h, w, spacing);
        let pred = random_mask(&mut rng, h, w, spacing);

        let d = dsc(&truth, &pred, 1).unwrap();
        assert!((d - oracle::dsc(&truth, &pred, 1)).abs() < 1e-12, "case {case}");
        assert!((0.0..=1.0).contains(&d));

        match (hd95(&truth, &pred, 1).unwrap(), oracle::hd95(&truth, &pred, 1)) {
            (Some(got), Some(want)) => {
                assert!((got - want).abs() < 1e-9, "case {case}: hd95 {got} vs {want}");
                compared += 1;
            }
            (None, None) => {}
            (got, want) => panic!("case {case}: definedness mismatch {got:?} vs {want:?}"),
        }
        match (msd(&truth, &pred, 1).unwrap(), oracle::msd(&truth, &pred, 1)) {
            (Some(got), Some(want)) => {
                assert!((got - want).abs() < 1e-9, "case {case}: msd {got} vs {want}");
            }
            (None, None) => {}
            (got, want) => panic!("case {case}: definedness mismatch {got:?} vs {want:?}"),
        }
    }
    assert!(compared > 100, "only {compared} defined cases, raise shape density");
}

#[test]
fn boundary_extraction_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..50 {
        let m = random_mask(&mut rng, 16, 16, (1.0, 1.0));
        let got = extract_boundary(&m, 1).points_mm();
        let want = oracle::boundary_points(&m, 1);
        assert_eq!(got, want);
    }
}

#[test]
fn metrics_are_symmetric_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let a = random_mask(&mut rng, 20, 20, (1.0, 1.3));
        let b = random_mask(&mut rng, 20, 20, (1.0, 1.3));
        assert_eq!(dsc(&a, &b, 1).unwrap(), dsc(&b, &a, 1).unwrap());
        assert_eq!(hd95(&a, &b, 1).unwrap(), hd95(&b, &a, 1).unwrap());
        assert_eq!(msd(&a, &b, 1).unwrap(), msd(&b, &a, 1).unwrap());
    }
}

#[test]
fn doubling_spacing_doubles_distances_and_keeps_dsc() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let a1 = random_mask(&mut rng, 24, 24, (1.0, 1.0));
        let b1 = random_mask(&mut rng, 24, 24, (1.0, 1.0));
        let a2 = LabelMap::new(24, 24, a1.data().to_vec(), (2.0, 2.0)).unwrap();
        let b2 = LabelMap::new(24, 24, b1.data().to_vec(), (2.0, 2.0)).unwrap();
        assert_eq!(dsc(&a1, &b1, 1).unwrap(), dsc(&a2, &b2, 1).unwrap());
        if let (Some(h1), Some(h2)) = (hd95(&a1, &b1, 1).unwrap(), hd95(&a2, &b2, 1).unwrap()) {
            assert!((h2 - 2.0 * h1).abs() < 1e-9);
        }
        if let (Some(m1), Some(m2)) = (msd(&a1, &b1, 1).unwrap(), msd(&a2, &b2, 1).unwrap()) {
            assert!((m2 - 2.0 * m1).abs() < 1e-9);
        }
    }
}

#[test]
fn translating_both_masks_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        // draw interior content in a 12x12 area, then place it at two offsets
        // inside a 24x24 frame
        let small_t = random_mask(&mut rng, 12, 12, (1.0, 1.0));
        let small_p = random_mask(&mut rng, 12, 12, (1.0, 1.0));
        let place = |src: &LabelMap, dr: usize, dc: usize| -> LabelMap {
            let mut m = LabelMap::zeros(24, 24, (1.0, 1.0));
            for r in 0..12 {
                for c in 0..12 {
                    m.set(r + dr, c + dc, src.get(r, c));
                }
            }
            m
        };
        let (t0, p0) = (place(&small_t, 2, 3), place(&small_p, 2, 3));
        let (t1, p1) = (place(&small_t, 9, 7), place(&small_p, 9, 7));
        assert_eq!(dsc(&t0, &p0, 1).unwrap(), dsc(&t1, &p1, 1).unwrap());
        assert_eq!(hd95(&t0, &p0, 1).unwrap(), hd95(&t1, &p1, 1).unwrap());
        assert_eq!(msd(&t0, &p0, 1).unwrap(), msd(&t1, &p1, 1).unwrap());
    }
}

#[test]
fn undefined_cases_never_return_a_number() {
    let empty = LabelMap::zeros(8, 8, (1.0, 1.0));
    let mut full = LabelMap::zeros(8, 8, (1.0, 1.0));
    full.set(3, 3, 1);
    for (a, b) in [(&empty, &full), (&full, &empty), (&empty, &empty)] {
        assert_eq!(hd95(a, b, 1).unwrap(), None);
        assert_eq!(msd(a, b, 1).unwrap(), None);
    }
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    let a = LabelMap::zeros(8, 8, (1.0, 1.0));
    let b = LabelMap::zeros(8, 9, (1.0, 1.0));
    assert!(dsc(&a, &b, 1).is_err());
    assert!(hd95(&a, &b, 1).is_err());
    assert!(msd(&a, &b, 1).is_err());
}

#[test]
fn hd95_of_identical_masks_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let m = random_mask(&mut rng, 16, 16, (1.0, 1.0));
        if m.count_class(1) == 0 {
            continue;
        }
        assert_eq!(hd95(&m, &m, 1).unwrap(), Some(0.0));
        assert_eq!(msd(&m, &m, 1).unwrap(), Some(0.0));
        assert_eq!(dsc(&m, &m, 1).unwrap(), 1.0);
    }
}

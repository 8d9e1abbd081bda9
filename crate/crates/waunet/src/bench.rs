//! Attention complexity benchmark: analytic flop counts, instrumented
//! multiply counters, wall-clock timing, and fitted log-log scaling slopes.

use std::time::Instant;

use serde::Serialize;

use waunet_core::attention::complexity::{
    axial_scores_counted, count_attention_flops, full_scores_counted, AttentionMode, ScoreProblem,
};

use crate::error::{AppError, Result};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Square image extents to sweep.
    pub sizes: Vec<usize>,
    /// Largest extent the quadratic reference runs at.
    pub full_cap: usize,
    pub channels: usize,
    pub heads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: vec![8, 16, 32, 64],
            full_cap: 32,
            channels: 16,
            heads: 8,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: &'static str,
    pub h: usize,
    pub w: usize,
    pub tokens: usize,
    pub flops: u64,
    pub multiplies: u64,
    pub seconds: f64,
}

/// Fitted log-log slopes. The x variable is chosen so the claimed scaling
/// laws both have theoretical exponent 2: full cost against the token count
/// (cost ~ tokens^2) and axial cost against sqrt(HW*(H+W)) (cost ~ x^2).
/// Side-based slopes (theory: 4 and 3) are reported alongside.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSlopes {
    pub full_vs_tokens: f64,
    pub axial_vs_sqrt_cost: f64,
    pub full_vs_side: f64,
    pub axial_vs_side: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub slopes: BenchSlopes,
    /// full/axial analytic flop ratio per size.
    pub flop_ratios: Vec<(usize, f64)>,
}

/// Times `f` adaptively: repeats until a batch takes at least ~20ms and
/// returns the best per-call seconds of three batches.
fn time_seconds<F: FnMut() -> f64>(mut f: F) -> f64 {
    let mut sink = 0.0;
    sink += f(); // warm-up
    let t0 = Instant::now();
    sink += f();
    let once = t0.elapsed().as_secs_f64().max(1e-7);
    let reps = ((0.02 / once).ceil() as usize).clamp(1, 10_000);
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let t0 = Instant::now();
        for _ in 0..reps {
            sink += f();
        }
        best = best.min(t0.elapsed().as_secs_f64() / reps as f64);
    }
    std::hint::black_box(sink);
    best
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx: f64 = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my: f64 = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.sizes.len() < 2 {
        return Err(AppError::Usage("bench: need at least two sizes".into()));
    }
    if cfg.channels == 0 || cfg.heads == 0 || cfg.channels % cfg.heads != 0 {
        return Err(AppError::Usage(format!(
            "bench: channels {} must be a positive multiple of heads {}",
            cfg.channels, cfg.heads
        )));
    }
    let mut rows = Vec::new();
    let mut axial_pts = Vec::new();
    let mut axial_side_pts = Vec::new();
    let mut full_pts = Vec::new();
    let mut full_side_pts = Vec::new();
    let mut ratios = Vec::new();

    for &s in &cfg.sizes {
        let problem = ScoreProblem::random(s, s, cfg.channels, cfg.heads, cfg.seed);

        let axial_flops = count_attention_flops(s, s, cfg.channels, AttentionMode::Axial);
        let counted = axial_scores_counted(&problem);
        if counted.multiplies != axial_flops {
            return Err(AppError::Runtime(format!(
                "axial multiply counter {} disagrees with formula {axial_flops} at size {s}",
                counted.multiplies
            )));
        }
        let secs = time_seconds(|| axial_scores_counted(&problem).checksum);
        rows.push(BenchRow {
            mode: "axial",
            h: s,
            w: s,
            tokens: s * s,
            flops: axial_flops,
            multiplies: counted.multiplies,
            seconds: secs,
        });
        axial_pts.push(((axial_flops as f64).sqrt().ln(), secs.ln()));
        axial_side_pts.push(((s as f64).ln(), secs.ln()));

        let full_flops = count_attention_flops(s, s, cfg.channels, AttentionMode::Full);
        ratios.push((s, full_flops as f64 / axial_flops as f64));
        if s <= cfg.full_cap {
            let counted = full_scores_counted(&problem);
            if counted.multiplies != full_flops {
                return Err(AppError::Runtime(format!(
                    "full multiply counter {} disagrees with formula {full_flops} at size {s}",
                    counted.multiplies
                )));
            }
            let secs = time_seconds(|| full_scores_counted(&problem).checksum);
            rows.push(BenchRow {
                mode: "full",
                h: s,
                w: s,
                tokens: s * s,
                flops: full_flops,
                multiplies: counted.multiplies,
                seconds: secs,
            });
            full_pts.push((((s * s) as f64).ln(), secs.ln()));
            full_side_pts.push(((s as f64).ln(), secs.ln()));
        }
    }

    Ok(BenchReport {
        rows,
        slopes: BenchSlopes {
            full_vs_tokens: least_squares_slope(&full_pts),
            axial_vs_sqrt_cost: least_squares_slope(&axial_pts),
            full_vs_side: least_squares_slope(&full_side_pts),
            axial_vs_side: least_squares_slope(&axial_side_pts),
        },
        flop_ratios: ratios,
    })
}

pub fn rows_csv(report: &BenchReport) -> String {
    let mut out = String::from("mode,h,w,tokens,flops,multiplies,seconds\n");
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mode, r.h, r.w, r.tokens, r.flops, r.multiplies, r.seconds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flop_columns_equal_formula_and_ratio_at_32_is_16() {
        let cfg = BenchConfig {
            sizes: vec![8, 16, 32],
            full_cap: 16,
            channels: 8,
            heads: 2,
            seed: 1,
        };
        let report = run_bench(&cfg).unwrap();
        for row in &report.rows {
            let mode = if row.mode == "axial" {
                AttentionMode::Axial
            } else {
                AttentionMode::Full
            };
            assert_eq!(
                row.flops,
                count_attention_flops(row.h, row.w, cfg.channels, mode)
            );
            assert_eq!(row.flops, row.multiplies);
        }
        let (_, ratio32) = report
            .flop_ratios
            .iter()
            .find(|(s, _)| *s == 32)
            .copied()
            .unwrap();
        assert_eq!(ratio32, 16.0);
    }

    #[test]
    fn slope_fit_recovers_known_exponent() {
        let pts: Vec<(f64, f64)> = [2.0f64, 4.0, 8.0, 16.0]
            .iter()
            .map(|&x| (x.ln(), (3.5 * x.powi(3)).ln()))
            .collect();
        let slope = least_squares_slope(&pts);
        assert!((slope - 3.0).abs() < 1e-9);
    }
}

//! Gradient-check harness behind the `gradcheck` subcommand: every primitive
//! kind once, then the full desk-scale network on sampled parameters.

use serde::Serialize;

use waunet_core::gradcheck::{grad_check, primitive_cases, GradCheckOptions};
use waunet_core::net::{build_waunet, randomize_for_gradcheck, NetConfig, WauNet};
use waunet_core::ops::OpKind;
use waunet_core::params::{AttachedParams, ParamStore};
use waunet_core::rng::stream_rng;
use waunet_core::Tensor;

use crate::error::{AppError, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckRow {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
    pub coords_checked: usize,
    pub coords_skipped: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub rows: Vec<GradCheckRow>,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub per_op_threshold: f64,
    pub net_threshold: f64,
    pub net_samples: usize,
    pub seed: u64,
    /// Deliberately corrupt this kind's backward rule; the run must then fail.
    pub inject_fault: Option<OpKind>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            per_op_threshold: 1e-5,
            net_threshold: 1e-4,
            net_samples: 240,
            seed: 9,
            inject_fault: None,
        }
    }
}

/// Runs the whole harness. The report lists every primitive kind exactly
/// once, then the `desk-net` row.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rows = Vec::new();

    let cases = primitive_cases();
    debug_assert_eq!(cases.len(), OpKind::ALL.len());
    for case in &cases {
        let mut rng = stream_rng(cfg.seed, 100);
        let leaves = (case.make_leaves)(&mut rng);
        let outcome = grad_check(
            &leaves,
            case.build,
            &GradCheckOptions {
                eps: cfg.eps,
                samples: None,
                seed: cfg.seed,
                inject_fault: cfg.inject_fault.filter(|&k| k == case.kind),
            },
        )
        .map_err(AppError::Core)?;
        rows.push(GradCheckRow {
            name: case.kind.name().to_string(),
            max_rel_err: outcome.max_rel_err,
            threshold: cfg.per_op_threshold,
            coords_checked: outcome.coords_checked,
            coords_skipped: outcome.coords_skipped,
            pass: outcome.max_rel_err < cfg.per_op_threshold,
        });
    }

    // Full desk-scale network at a generic parameter point.
    let net_cfg = NetConfig::desk();
    let mut net = build_waunet::<f64>(&net_cfg, cfg.seed).map_err(AppError::Core)?;
    randomize_for_gradcheck(&mut net, cfg.seed);
    let mut rng = stream_rng(cfg.seed, 101);
    let images = Tensor::<f64>::uniform(&[1, 1, net_cfg.input_size, net_cfg.input_size], 0.0, 1.0, &mut rng);
    let labels: Vec<u32> = (0..net_cfg.input_size * net_cfg.input_size)
        .map(|i| (i % net_cfg.num_classes) as u32)
        .collect();
    let leaves: Vec<Tensor<f64>> = net.params.iter().map(|(_, t)| t.clone()).collect();
    let names: Vec<String> = net.params.iter().map(|(n, _)| n.to_string()).collect();
    let outcome = grad_check(
        &leaves,
        move |g, ids| {
            let shell = WauNet {
                config: net_cfg.clone(),
                params: ParamStore::new(),
            };
            let vars =
                AttachedParams::from_pairs(names.iter().cloned().zip(ids.iter().copied()));
            let x = g.constant(images.clone());
            let logits = shell.forward(g, &vars, x)?;
            g.cross_entropy(logits, &labels)
        },
        &GradCheckOptions {
            eps: cfg.eps,
            samples: Some(cfg.net_samples),
            seed: cfg.seed,
            inject_fault: cfg.inject_fault,
        },
    )
    .map_err(AppError::Core)?;
    rows.push(GradCheckRow {
        name: "desk-net".to_string(),
        max_rel_err: outcome.max_rel_err,
        threshold: cfg.net_threshold,
        coords_checked: outcome.coords_checked,
        coords_skipped: outcome.coords_skipped,
        pass: outcome.max_rel_err < cfg.net_threshold && outcome.coords_checked >= 200,
    });

    let pass = rows.iter().all(|r| r.pass);
    Ok(GradCheckReport { rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_covers_every_primitive_exactly_once_plus_net() {
        // cheap configuration: reuse defaults but confirm coverage only
        let kinds: Vec<&str> = OpKind::ALL.iter().map(|k| k.name()).collect();
        let cases = primitive_cases();
        let case_kinds: Vec<&str> = cases.iter().map(|c| c.kind.name()).collect();
        assert_eq!(kinds, case_kinds);
    }
}

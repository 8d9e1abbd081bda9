//! Multi-head axial self-attention with relative positional encodings, plus
//! a full (quadratic) self-attention reference used as an oracle and as the
//! complexity baseline.
//!
//! One axis pass attends along rows or columns only. Per head, the logits for
//! query position `j` and key position `w` on the attended axis are
//!
//! ```text
//! logit(j, w) = q_j . k_w / sqrt(d_k)  +  q_j . r_q[w-j]  +  k_w . r_k[w-j]
//! ```
//!
//! softmaxed jointly over `w`, and the aggregated value is
//! `sum_w attn(j,w) * (v_w + r_v[w-j])`. Only the content logit carries the
//! `1/sqrt(d_k)` scale. Offsets index tables of extent `2L-1` shared across
//! the batch and the non-attended axis, one table set per head.

use alloc::format;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Image axis an axial pass attends along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis2d {
    Height,
    Width,
}

/// Graph handles for one axis pass: projections, output projection, and the
/// relative positional tables sized for that axis.
#[derive(Debug, Clone, Copy)]
pub struct AxisAttnVars {
    pub wq: VarId,
    pub wk: VarId,
    pub wv: VarId,
    pub wo: VarId,
    pub rq: VarId,
    pub rk: VarId,
    pub rv: VarId,
}

/// One axial attention layer: a height pass followed by a width pass, each
/// with its own parameters and a residual connection around it.
#[derive(Debug, Clone, Copy)]
pub struct AxialLayerVars {
    pub height: AxisAttnVars,
    pub width: AxisAttnVars,
}

/// Intermediate handles of one axis pass, for tests that need to look inside.
pub struct AxialTrace {
    /// Final `[N,C,H,W]` output (after the output projection, no residual).
    pub out: VarId,
    /// Attention weights `[N*rows*heads, L, L]`, rows summing to 1.
    pub attn: VarId,
    /// Per-head aggregated values `[N*rows*heads, L, d_k]`, before the heads
    /// are merged and output-projected.
    pub heads_out: VarId,
}

fn check_attn_dims<T: Scalar>(
    g: &Graph<T>,
    x: VarId,
    vars: &AxisAttnVars,
    heads: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let xs = g.shape(x);
    if xs.len() != 4 {
        return Err(Error::Shape(format!(
            "axial attention expects [N,C,H,W], got {xs:?}"
        )));
    }
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let ws = g.shape(vars.wq);
    if ws.len() != 2 || ws[0] != c {
        return Err(Error::Shape(format!(
            "projection expects {c} input channels, got {ws:?}"
        )));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::Config(format!(
            "d_model {c} is not divisible by heads {heads}"
        )));
    }
    Ok((n, c, h, w, c / heads))
}

/// Rearranges `[N,C,H,W]` into flat per-position rows `[N*rows*L, C]` where
/// `L` is the attended axis extent and `rows` the other spatial extent.
fn to_lanes<T: Scalar>(g: &mut Graph<T>, x: VarId, axis: Axis2d) -> Result<VarId> {
    let xs = g.shape(x).to_vec();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    match axis {
        Axis2d::Width => {
            let t = g.permute(x, &[0, 2, 3, 1])?; // [N,H,W,C]
            g.reshape(t, &[n * h * w, c])
        }
        Axis2d::Height => {
            let t = g.permute(x, &[0, 3, 2, 1])?; // [N,W,H,C]
            g.reshape(t, &[n * w * h, c])
        }
    }
}

/// Inverse of [`to_lanes`] back to `[N,C,H,W]`.
fn from_lanes<T: Scalar>(
    g: &mut Graph<T>,
    flat: VarId,
    axis: Axis2d,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
) -> Result<VarId> {
    match axis {
        Axis2d::Width => {
            let t = g.reshape(flat, &[n, h, w, c])?;
            g.permute(t, &[0, 3, 1, 2])
        }
        Axis2d::Height => {
            let t = g.reshape(flat, &[n, w, h, c])?;
            g.permute(t, &[0, 3, 2, 1])
        }
    }
}

/// Splits `[N*rows*L, C]` rows into per-head lanes `[N*rows*heads, L, d_k]`.
fn split_heads<T: Scalar>(
    g: &mut Graph<T>,
    flat: VarId,
    rows: usize,
    l: usize,
    heads: usize,
    d_k: usize,
) -> Result<VarId> {
    let t = g.reshape(flat, &[rows, l, heads, d_k])?;
    let t = g.permute(t, &[0, 2, 1, 3])?; // [rows, heads, L, d_k]
    g.reshape(t, &[rows * heads, l, d_k])
}

/// Inverse of [`split_heads`]: merges `[N*rows*heads, L, d_k]` back into
/// `[N*rows*L, C]`.
fn merge_heads<T: Scalar>(
    g: &mut Graph<T>,
    lanes: VarId,
    rows: usize,
    l: usize,
    heads: usize,
    d_k: usize,
) -> Result<VarId> {
    let t = g.reshape(lanes, &[rows, heads, l, d_k])?;
    let t = g.permute(t, &[0, 2, 1, 3])?; // [rows, L, heads, d_k]
    g.reshape(t, &[rows * l, heads * d_k])
}

/// Projects an `[N,C,H,W]` feature map to per-head queries, keys and values
/// laid out `[N*rows*heads, L, d_k]` for the given axis.
pub fn qkv_project<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    vars: &AxisAttnVars,
    heads: usize,
    axis: Axis2d,
) -> Result<(VarId, VarId, VarId)> {
    let (n, _c, h, w, d_k) = check_attn_dims(g, x, vars, heads)?;
    let (rows, l) = match axis {
        Axis2d::Width => (n * h, w),
        Axis2d::Height => (n * w, h),
    };
    let flat = to_lanes(g, x, axis)?;
    let q = g.matmul(flat, vars.wq)?;
    let k = g.matmul(flat, vars.wk)?;
    let v = g.matmul(flat, vars.wv)?;
    let q = split_heads(g, q, rows, l, heads, d_k)?;
    let k = split_heads(g, k, rows, l, heads, d_k)?;
    let v = split_heads(g, v, rows, l, heads, d_k)?;
    Ok((q, k, v))
}

/// One axial attention pass along `axis`, returning the projected output and
/// the intermediates. No residual connection here; blocks add it.
pub fn axial_attend_traced<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    vars: &AxisAttnVars,
    heads: usize,
    axis: Axis2d,
) -> Result<AxialTrace> {
    let (n, c, h, w, d_k) = check_attn_dims(g, x, vars, heads)?;
    let (rows, l) = match axis {
        Axis2d::Width => (n * h, w),
        Axis2d::Height => (n * w, h),
    };
    let (q, k, v) = qkv_project(g, x, vars, heads, axis)?;

    let content = g.bmm_nt(q, k)?;
    let scaled = g.scalar_mul(content, lit::<T>(1.0 / (d_k as f64).sqrt()))?;
    let rq_logits = g.rel_logits_q(q, vars.rq, heads)?;
    let rk_logits = g.rel_logits_k(k, vars.rk, heads)?;
    let sum = g.add(scaled, rq_logits)?;
    let logits = g.add(sum, rk_logits)?;
    let attn = g.softmax(logits, 2)?;

    let content_out = g.bmm(attn, v)?;
    let pos_out = g.rel_values(attn, vars.rv, heads)?;
    let heads_out = g.add(content_out, pos_out)?;

    let merged = merge_heads(g, heads_out, rows, l, heads, d_k)?;
    let projected = g.matmul(merged, vars.wo)?;
    let out = from_lanes(g, projected, axis, n, c, h, w)?;
    Ok(AxialTrace {
        out,
        attn,
        heads_out,
    })
}

/// One axial attention pass along `axis`.
pub fn axial_attend<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    vars: &AxisAttnVars,
    heads: usize,
    axis: Axis2d,
) -> Result<VarId> {
    Ok(axial_attend_traced(g, x, vars, heads, axis)?.out)
}

/// A stack of axial attention layers. Each layer runs a height pass then a
/// width pass, with a residual connection around each pass, so zero output
/// projections make the whole block the identity.
pub fn attention_block<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    layers: &[AxialLayerVars],
    heads: usize,
) -> Result<VarId> {
    if layers.is_empty() {
        return Err(Error::Config("attention block needs depth >= 1".into()));
    }
    let mut cur = x;
    for layer in layers {
        let h_out = axial_attend(g, cur, &layer.height, heads, Axis2d::Height)?;
        cur = g.add(cur, h_out)?;
        let w_out = axial_attend(g, cur, &layer.width, heads, Axis2d::Width)?;
        cur = g.add(cur, w_out)?;
    }
    Ok(cur)
}

/// Exact multi-head self-attention over all `H*W` tokens:
/// `softmax(Q K^T / sqrt(d_k)) V` per head, then the output projection.
/// Positional tables are ignored. Quadratic in token count; oracle use only.
pub fn full_attention_reference<T: Scalar>(
    g: &mut Graph<T>,
    x: VarId,
    vars: &AxisAttnVars,
    heads: usize,
) -> Result<VarId> {
    let (n, c, h, w, d_k) = check_attn_dims(g, x, vars, heads)?;
    let tokens = h * w;
    let nhwc = g.permute(x, &[0, 2, 3, 1])?;
    let flat = g.reshape(nhwc, &[n * tokens, c])?;
    let q = g.matmul(flat, vars.wq)?;
    let k = g.matmul(flat, vars.wk)?;
    let v = g.matmul(flat, vars.wv)?;
    let q = split_heads(g, q, n, tokens, heads, d_k)?;
    let k = split_heads(g, k, n, tokens, heads, d_k)?;
    let v = split_heads(g, v, n, tokens, heads, d_k)?;

    let content = g.bmm_nt(q, k)?;
    let logits = g.scalar_mul(content, lit::<T>(1.0 / (d_k as f64).sqrt()))?;
    let attn = g.softmax(logits, 2)?;
    let out = g.bmm(attn, v)?;

    let merged = merge_heads(g, out, n, tokens, heads, d_k)?;
    let projected = g.matmul(merged, vars.wo)?;
    let back = g.reshape(projected, &[n, h, w, c])?;
    g.permute(back, &[0, 3, 1, 2])
}

/// Freshly initialized tensors for one axis pass.
pub struct AxisAttnInit<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub rq: Tensor<T>,
    pub rk: Tensor<T>,
    pub rv: Tensor<T>,
}

/// Initialization scheme: Xavier-uniform projections, positional tables
/// uniform in `[-1/sqrt(d_k), 1/sqrt(d_k)]`, output projection zero so a
/// fresh block is the identity map.
pub fn init_axis_attn<T: Scalar, R: Rng>(
    d_model: usize,
    axis_len: usize,
    heads: usize,
    rng: &mut R,
) -> AxisAttnInit<T> {
    let d_k = d_model / heads;
    let xavier = (6.0 / (d_model + d_k) as f64).sqrt();
    let pos = 1.0 / (d_k as f64).sqrt();
    let table = [2 * axis_len - 1, d_model];
    AxisAttnInit {
        wq: Tensor::uniform(&[d_model, d_model], -xavier, xavier, rng),
        wk: Tensor::uniform(&[d_model, d_model], -xavier, xavier, rng),
        wv: Tensor::uniform(&[d_model, d_model], -xavier, xavier, rng),
        wo: Tensor::zeros(&[d_model, d_model]),
        rq: Tensor::uniform(&table, -pos, pos, rng),
        rk: Tensor::uniform(&table, -pos, pos, rng),
        rv: Tensor::uniform(&table, -pos, pos, rng),
    }
}

/// Attention cost model and instrumented kernels.
pub mod complexity {
    use alloc::vec;
    use alloc::vec::Vec;

    use num_traits::Float;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Which attention pattern a figure refers to.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum AttentionMode {
        Axial,
        Full,
    }

    impl AttentionMode {
        pub fn name(self) -> &'static str {
            match self {
                AttentionMode::Axial => "axial",
                AttentionMode::Full => "full",
            }
        }
    }

    /// Analytic multiply-accumulate count of the attention-score and value
    /// aggregation stages (projections excluded):
    ///
    /// * axial: `2 * HW * (H+W) * C`
    /// * full:  `2 * (HW)^2 * C`
    ///
    /// `C = heads * d_k`, so the count is independent of the head split.
    pub fn count_attention_flops(h: usize, w: usize, c: usize, mode: AttentionMode) -> u64 {
        let (h, w, c) = (h as u64, w as u64, c as u64);
        let tokens = h * w;
        match mode {
            AttentionMode::Axial => 2 * tokens * (h + w) * c,
            AttentionMode::Full => 2 * tokens * tokens * c,
        }
    }

    /// Precomputed q/k/v lanes for the instrumented kernels, `[heads,H,W,d_k]`
    /// row-major with the content scale already folded into `q`.
    pub struct ScoreProblem {
        pub h: usize,
        pub w: usize,
        pub heads: usize,
        pub d_k: usize,
        q: Vec<f32>,
        k: Vec<f32>,
        v: Vec<f32>,
    }

    /// Output of a counted kernel run. The checksum exists so callers can
    /// keep the computation observable while timing.
    pub struct CountedRun {
        pub checksum: f64,
        pub multiplies: u64,
    }

    impl ScoreProblem {
        pub fn random(h: usize, w: usize, c: usize, heads: usize, seed: u64) -> ScoreProblem {
            assert!(heads > 0 && c % heads == 0);
            let d_k = c / heads;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = heads * h * w * d_k;
            let mut draw = |scale: f32| -> Vec<f32> {
                (0..n).map(|_| rng.gen_range(-1.0f32..1.0) * scale).collect()
            };
            let inv_sqrt = 1.0 / (d_k as f32).sqrt();
            ScoreProblem {
                h,
                w,
                heads,
                d_k,
                q: draw(inv_sqrt),
                k: draw(1.0),
                v: draw(1.0),
            }
        }

        #[inline]
        fn at(&self, head: usize, y: usize, x: usize) -> usize {
            ((head * self.h + y) * self.w + x) * self.d_k
        }
    }

    fn softmax_inplace(logits: &mut [f32]) {
        let mut max = f32::NEG_INFINITY;
        for &v in logits.iter() {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0f32;
        for v in logits.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in logits.iter_mut() {
            *v /= sum;
        }
    }

    /// Content-only axial attention (height pass + width pass) with a
    /// multiply counter incremented alongside every dot product and weighted
    /// accumulation. The counter total must equal
    /// `count_attention_flops(h, w, heads*d_k, Axial)`.
    pub fn axial_scores_counted(p: &ScoreProblem) -> CountedRun {
        let (h, w, d_k) = (p.h, p.w, p.d_k);
        let mut multiplies = 0u64;
        let mut checksum = 0.0f64;
        let mut logits = vec![0.0f32; h.max(w)];
        let mut out = vec![0.0f32; d_k];
        for head in 0..p.heads {
            // height pass: queries and keys share a column
            for x in 0..w {
                for j in 0..h {
                    let q = &p.q[p.at(head, j, x)..p.at(head, j, x) + d_k];
                    for (i, slot) in logits[..h].iter_mut().enumerate() {
                        let k = &p.k[p.at(head, i, x)..p.at(head, i, x) + d_k];
                        let mut acc = 0.0f32;
                        for (&qv, &kv) in q.iter().zip(k.iter()) {
                            acc += qv * kv;
                        }
                        multiplies += d_k as u64;
                        *slot = acc;
                    }
                    softmax_inplace(&mut logits[..h]);
                    out.fill(0.0);
                    for (i, &a) in logits[..h].iter().enumerate() {
                        let v = &p.v[p.at(head, i, x)..p.at(head, i, x) + d_k];
                        for (o, &vv) in out.iter_mut().zip(v.iter()) {
                            *o += a * vv;
                        }
                        multiplies += d_k as u64;
                    }
                    checksum += out.iter().map(|&v| v as f64).sum::<f64>();
                }
            }
            // width pass: queries and keys share a row
            for y in 0..h {
                for j in 0..w {
                    let q = &p.q[p.at(head, y, j)..p.at(head, y, j) + d_k];
                    for (i, slot) in logits[..w].iter_mut().enumerate() {
                        let k = &p.k[p.at(head, y, i)..p.at(head, y, i) + d_k];
                        let mut acc = 0.0f32;
                        for (&qv, &kv) in q.iter().zip(k.iter()) {
                            acc += qv * kv;
                        }
                        multiplies += d_k as u64;
                        *slot = acc;
                    }
                    softmax_inplace(&mut logits[..w]);
                    out.fill(0.0);
                    for (i, &a) in logits[..w].iter().enumerate() {
                        let v = &p.v[p.at(head, y, i)..p.at(head, y, i) + d_k];
                        for (o, &vv) in out.iter_mut().zip(v.iter()) {
                            *o += a * vv;
                        }
                        multiplies += d_k as u64;
                    }
                    checksum += out.iter().map(|&v| v as f64).sum::<f64>();
                }
            }
        }
        CountedRun {
            checksum,
            multiplies,
        }
    }

    /// Content-only full self-attention over all `H*W` tokens with the same
    /// instrumentation; must equal `count_attention_flops(.., Full)`.
    pub fn full_scores_counted(p: &ScoreProblem) -> CountedRun {
        let (h, w, d_k) = (p.h, p.w, p.d_k);
        let tokens = h * w;
        let mut multiplies = 0u64;
        let mut checksum = 0.0f64;
        let mut logits = vec![0.0f32; tokens];
        let mut out = vec![0.0f32; d_k];
        for head in 0..p.heads {
            let base = head * tokens * d_k;
            for t in 0..tokens {
                let q = &p.q[base + t * d_k..base + (t + 1) * d_k];
                for (u, slot) in logits.iter_mut().enumerate() {
                    let k = &p.k[base + u * d_k..base + (u + 1) * d_k];
                    let mut acc = 0.0f32;
                    for (&qv, &kv) in q.iter().zip(k.iter()) {
                        acc += qv * kv;
                    }
                    multiplies += d_k as u64;
                    *slot = acc;
                }
                softmax_inplace(&mut logits);
                out.fill(0.0);
                for (u, &a) in logits.iter().enumerate() {
                    let v = &p.v[base + u * d_k..base + (u + 1) * d_k];
                    for (o, &vv) in out.iter_mut().zip(v.iter()) {
                        *o += a * vv;
                    }
                    multiplies += d_k as u64;
                }
                checksum += out.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        CountedRun {
            checksum,
            multiplies,
        }
    }

}

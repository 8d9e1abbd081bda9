//! The weaving-attention U-net: a nested grid of CNN blocks with dense skip
//! fusion, down/up-sampling between pyramid levels, per-level axial attention
//! blocks on the encoder-to-decoder bridge, and a 1x1 classification head.
//!
//! # Wiring
//!
//! Nodes form a triangular grid `X[i][j]` (level `i` from the top, column
//! `j`), existing where `i + j <= levels-1`. Column 0 is the encoder;
//! `X[i][0]` is a CNN block over the max-pooled output of `X[i-1][0]`.
//! Interior nodes fuse all same-level predecessors with the up-sampled node
//! below-left: `X[i][j] = cnn(fuse(X[i][0..j], up(X[i+1][j-1])))`.
//!
//! Once the grid short of the final anti-diagonal is built, each level's last
//! node runs through that level's axial attention block, and the final
//! decoder column consumes the attended maps bottom-up. The head is a 1x1
//! convolution to `num_classes` channels at full resolution.
//!
//! The attention output projections start at zero, so a freshly built network
//! computes exactly the same function as one with attention disabled.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::attention::{attention_block, init_axis_attn, AxialLayerVars, AxisAttnVars};
use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::metrics::LabelMap;
use crate::params::{AttachedParams, ParamStore};
use crate::rng::{stream_rng, streams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetConfig {
    pub levels: usize,
    /// Channel count per level, top to bottom.
    pub filters: Vec<usize>,
    /// Axial attention layers per level, top to bottom.
    pub attention_depths: Vec<usize>,
    pub heads: usize,
    /// Organs plus one for background.
    pub num_classes: usize,
    /// Square input extent.
    pub input_size: usize,
    pub in_channels: usize,
    /// Optional per-channel batch normalization inside CNN blocks.
    pub batch_norm: bool,
}

impl NetConfig {
    /// Desk-scale default: trains on a CPU in minutes.
    pub fn desk() -> Self {
        NetConfig {
            levels: 3,
            filters: alloc::vec![8, 16, 32],
            attention_depths: alloc::vec![1, 2, 3],
            heads: 2,
            num_classes: 5,
            input_size: 32,
            in_channels: 1,
            batch_norm: false,
        }
    }

    /// The clinical-scale configuration; constructible for shape checks but
    /// far too slow to train here.
    pub fn paper() -> Self {
        NetConfig {
            levels: 5,
            filters: alloc::vec![64, 128, 256, 512, 1024],
            attention_depths: alloc::vec![2, 4, 6, 8, 10],
            heads: 8,
            num_classes: 11,
            input_size: 256,
            in_channels: 1,
            batch_norm: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be >= 1".into()));
        }
        if self.filters.len() != self.levels || self.attention_depths.len() != self.levels {
            return Err(Error::Config(format!(
                "filters ({}) and attention_depths ({}) must both have one entry per level ({})",
                self.filters.len(),
                self.attention_depths.len(),
                self.levels
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be >= 1".into()));
        }
        if self.heads == 0 {
            return Err(Error::Config("heads must be >= 1".into()));
        }
        let down = 1usize << (self.levels - 1);
        if self.input_size == 0 || self.input_size % down != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be divisible by 2^(levels-1) = {down}",
                self.input_size
            )));
        }
        for (i, (&f, &d)) in self
            .filters
            .iter()
            .zip(self.attention_depths.iter())
            .enumerate()
        {
            if f == 0 || d == 0 {
                return Err(Error::Config(format!(
                    "level {i}: filters and attention depth must be >= 1"
                )));
            }
            if f % self.heads != 0 {
                return Err(Error::Config(format!(
                    "level {i}: filters {f} not divisible by heads {}",
                    self.heads
                )));
            }
        }
        Ok(())
    }

    /// Spatial extent at a pyramid level.
    pub fn level_size(&self, level: usize) -> usize {
        self.input_size >> level
    }
}

/// Wiring description of one grid node, derived from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct GridNode {
    pub level: usize,
    pub column: usize,
    /// Same-level predecessor columns fused into this node.
    pub fused_columns: Vec<usize>,
    /// Whether an up-sampled input from `(level+1, column-1)` is fused.
    pub has_up_input: bool,
    /// Whether this node's output passes through the level's attention block
    /// before the final decoder column consumes it.
    pub attended: bool,
}

/// One assembled network: configuration plus its parameter store.
pub struct WauNet<T> {
    pub config: NetConfig,
    pub params: ParamStore<T>,
}

fn kaiming_uniform<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Builds a network with freshly initialized parameters, deterministic in
/// `seed`.
pub fn build_waunet<T: Scalar>(config: &NetConfig, seed: u64) -> Result<WauNet<T>> {
    config.validate()?;
    let mut rng = stream_rng(seed, streams::INIT);
    let mut params = ParamStore::new();
    let cfg = config.clone();
    let levels = cfg.levels;

    let add_conv_block = |params: &mut ParamStore<T>,
                              rng: &mut rand_chacha::ChaCha8Rng,
                              prefix: &str,
                              in_ch: usize,
                              out_ch: usize|
     -> Result<()> {
        let mut cin = in_ch;
        for t in 1..=3 {
            params.insert(
                &format!("{prefix}.conv{t}.w"),
                kaiming_uniform(&[out_ch, cin, 3, 3], cin * 9, rng),
            )?;
            params.insert(&format!("{prefix}.conv{t}.b"), Tensor::zeros(&[out_ch]))?;
            if cfg.batch_norm {
                params.insert(&format!("{prefix}.bn{t}.g"), Tensor::full(&[out_ch], T::one()))?;
                params.insert(&format!("{prefix}.bn{t}.be"), Tensor::zeros(&[out_ch]))?;
            }
            cin = out_ch;
        }
        Ok(())
    };

    // Grid nodes, column-major: encoder column first, then interior columns.
    for j in 0..levels {
        for i in 0..levels - j {
            let f = config.filters[i];
            let prefix = format!("x{i}_{j}");
            if j == 0 {
                let in_ch = if i == 0 {
                    config.in_channels
                } else {
                    config.filters[i - 1]
                };
                add_conv_block(&mut params, &mut rng, &prefix, in_ch, f)?;
            } else {
                params.insert(
                    &format!("{prefix}.up.w"),
                    kaiming_uniform(&[config.filters[i + 1], f, 2, 2], config.filters[i + 1] * 4, &mut rng),
                )?;
                params.insert(&format!("{prefix}.up.b"), Tensor::zeros(&[f]))?;
                let fuse_in = (j + 1) * f;
                params.insert(
                    &format!("{prefix}.fuse.w"),
                    kaiming_uniform(&[f, fuse_in, 1, 1], fuse_in, &mut rng),
                )?;
                params.insert(&format!("{prefix}.fuse.b"), Tensor::zeros(&[f]))?;
                add_conv_block(&mut params, &mut rng, &prefix, f, f)?;
            }
        }
    }

    // Attention blocks, one per level.
    for i in 0..levels {
        let c = config.filters[i];
        let len = config.level_size(i);
        for d in 0..config.attention_depths[i] {
            for axis in ["h", "w"] {
                let init = init_axis_attn::<T, _>(c, len, config.heads, &mut rng);
                let p = format!("att{i}.l{d}.{axis}");
                params.insert(&format!("{p}.wq"), init.wq)?;
                params.insert(&format!("{p}.wk"), init.wk)?;
                params.insert(&format!("{p}.wv"), init.wv)?;
                params.insert(&format!("{p}.wo"), init.wo)?;
                params.insert(&format!("{p}.rq"), init.rq)?;
                params.insert(&format!("{p}.rk"), init.rk)?;
                params.insert(&format!("{p}.rv"), init.rv)?;
            }
        }
    }

    // Classification head: 1x1 conv, deliberately near zero so the initial
    // prediction is a uniform softmax (loss ln K) while gradients still reach
    // every upstream parameter at the first step.
    let f0 = config.filters[0];
    let k = config.num_classes;
    let mut head = kaiming_uniform::<T, _>(&[k, f0, 1, 1], f0, &mut rng);
    for v in head.data_mut() {
        *v = *v * crate::scalar::lit::<T>(0.01);
    }
    params.insert("head.w", head)?;
    params.insert("head.b", Tensor::zeros(&[k]))?;

    Ok(WauNet {
        config: config.clone(),
        params,
    })
}

impl<T: Scalar> WauNet<T> {
    /// Attaches every parameter to a graph; `trainable` decides per name
    /// whether gradients are tracked.
    pub fn attach<F: Fn(&str) -> bool>(&self, g: &mut Graph<T>, trainable: F) -> AttachedParams {
        self.params.attach(g, trainable)
    }

    /// The node grid and its wiring, for inspection and tests.
    pub fn node_grid(&self) -> Vec<GridNode> {
        let levels = self.config.levels;
        let mut nodes = Vec::new();
        for j in 0..levels {
            for i in 0..levels - j {
                let last_pre_final = if i == levels - 1 {
                    j == 0
                } else {
                    j == levels - 2 - i
                };
                nodes.push(GridNode {
                    level: i,
                    column: j,
                    fused_columns: (0..j).collect(),
                    has_up_input: j > 0,
                    attended: last_pre_final,
                });
            }
        }
        nodes
    }

    fn conv_block(
        &self,
        g: &mut Graph<T>,
        vars: &AttachedParams,
        prefix: &str,
        mut x: VarId,
    ) -> Result<VarId> {
        for t in 1..=3 {
            let w = vars.var(&format!("{prefix}.conv{t}.w"))?;
            let b = vars.var(&format!("{prefix}.conv{t}.b"))?;
            x = g.conv2d(x, w, 1, 1)?;
            x = g.bias_add_chan(x, b)?;
            if self.config.batch_norm {
                let gamma = vars.var(&format!("{prefix}.bn{t}.g"))?;
                let beta = vars.var(&format!("{prefix}.bn{t}.be"))?;
                x = g.batch_norm2d(x, gamma, beta, crate::scalar::lit::<T>(1e-5))?;
            }
            x = g.relu(x)?;
        }
        Ok(x)
    }

    fn axis_vars(&self, vars: &AttachedParams, prefix: &str) -> Result<AxisAttnVars> {
        Ok(AxisAttnVars {
            wq: vars.var(&format!("{prefix}.wq"))?,
            wk: vars.var(&format!("{prefix}.wk"))?,
            wv: vars.var(&format!("{prefix}.wv"))?,
            wo: vars.var(&format!("{prefix}.wo"))?,
            rq: vars.var(&format!("{prefix}.rq"))?,
            rk: vars.var(&format!("{prefix}.rk"))?,
            rv: vars.var(&format!("{prefix}.rv"))?,
        })
    }

    fn attention(
        &self,
        g: &mut Graph<T>,
        vars: &AttachedParams,
        level: usize,
        x: VarId,
    ) -> Result<VarId> {
        let mut layers = Vec::new();
        for d in 0..self.config.attention_depths[level] {
            layers.push(AxialLayerVars {
                height: self.axis_vars(vars, &format!("att{level}.l{d}.h"))?,
                width: self.axis_vars(vars, &format!("att{level}.l{d}.w"))?,
            });
        }
        attention_block(g, x, &layers, self.config.heads)
    }

    /// Fuses feature maps by channel concatenation and a named 1x1 conv.
    fn fuse_into(
        &self,
        g: &mut Graph<T>,
        vars: &AttachedParams,
        prefix: &str,
        maps: &[VarId],
    ) -> Result<VarId> {
        let w = vars.var(&format!("{prefix}.fuse.w"))?;
        let b = vars.var(&format!("{prefix}.fuse.b"))?;
        fuse(g, maps, w, b)
    }

    fn upsample_into(
        &self,
        g: &mut Graph<T>,
        vars: &AttachedParams,
        prefix: &str,
        src: VarId,
    ) -> Result<VarId> {
        let w = vars.var(&format!("{prefix}.up.w"))?;
        let b = vars.var(&format!("{prefix}.up.b"))?;
        let up = g.deconv2d(src, w)?;
        g.bias_add_chan(up, b)
    }

    /// Full-resolution per-class logits `[N,K,H,W]`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        vars: &AttachedParams,
        images: VarId,
    ) -> Result<VarId> {
        self.forward_opts(g, vars, images, true)
    }

    /// Forward pass with attention blocks optionally bypassed. With all
    /// attention output projections zero (the initial state) both settings
    /// produce bit-identical logits.
    pub fn forward_opts(
        &self,
        g: &mut Graph<T>,
        vars: &AttachedParams,
        images: VarId,
        use_attention: bool,
    ) -> Result<VarId> {
        let cfg = &self.config;
        let shape = g.shape(images).to_vec();
        if shape.len() != 4
            || shape[1] != cfg.in_channels
            || shape[2] != cfg.input_size
            || shape[3] != cfg.input_size
        {
            return Err(Error::Shape(format!(
                "forward: expected [N,{},{},{}], got {shape:?}",
                cfg.in_channels, cfg.input_size, cfg.input_size
            )));
        }
        let levels = cfg.levels;

        // grid[i][j] holds X[i][j] once built
        let mut grid: Vec<Vec<Option<VarId>>> = (0..levels)
            .map(|i| alloc::vec![None; levels - i])
            .collect();

        // encoder column
        let mut cur = images;
        for i in 0..levels {
            let x = if i == 0 {
                cur
            } else {
                g.maxpool2x2(cur)?
            };
            let out = self.conv_block(g, vars, &format!("x{i}_0"), x)?;
            grid[i][0] = Some(out);
            cur = out;
        }

        // interior nested nodes, strictly before the final anti-diagonal
        for j in 1..levels {
            for i in 0..levels - j {
                if i + j > levels - 2 {
                    continue;
                }
                let prefix = format!("x{i}_{j}");
                let below = grid[i + 1][j - 1].expect("built in column order");
                let up = self.upsample_into(g, vars, &prefix, below)?;
                let mut maps: Vec<VarId> =
                    (0..j).map(|p| grid[i][p].expect("same level, earlier column")).collect();
                maps.push(up);
                let fused = self.fuse_into(g, vars, &prefix, &maps)?;
                grid[i][j] = Some(self.conv_block(g, vars, &prefix, fused)?);
            }
        }

        // per-level attention on the last node before the final column
        let mut attended: Vec<VarId> = Vec::with_capacity(levels);
        for i in 0..levels {
            let pre = if i == levels - 1 {
                grid[i][0].unwrap()
            } else {
                grid[i][levels - 2 - i].unwrap()
            };
            let out = if use_attention {
                self.attention(g, vars, i, pre)?
            } else {
                pre
            };
            attended.push(out);
        }

        // final decoder column, bottom-up
        let mut final_below = attended[levels - 1];
        for i in (0..levels.saturating_sub(1)).rev() {
            let j = levels - 1 - i;
            let prefix = format!("x{i}_{j}");
            let up = self.upsample_into(g, vars, &prefix, final_below)?;
            let mut maps: Vec<VarId> =
                (0..j - 1).map(|p| grid[i][p].expect("earlier column")).collect();
            maps.push(attended[i]);
            maps.push(up);
            let fused = self.fuse_into(g, vars, &prefix, &maps)?;
            let node = self.conv_block(g, vars, &prefix, fused)?;
            grid[i][j] = Some(node);
            final_below = node;
        }

        // 1x1 classification head
        let w = vars.var("head.w")?;
        let b = vars.var("head.b")?;
        let logits = g.conv2d(final_below, w, 1, 0)?;
        g.bias_add_chan(logits, b)
    }

    /// Inference convenience: fresh graph, no gradients, returns the logits.
    pub fn infer(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.attach(&mut g, |_| false);
        let x = g.constant(images.clone());
        let logits = self.forward(&mut g, &vars, x)?;
        Ok(g.value(logits).clone())
    }
}

/// Moves a network to a generic point in parameter space for gradient
/// checking: the attention output projections and the head, which start at
/// or near zero so a fresh network is attention-ablated and predicts a
/// uniform softmax, are re-drawn at full scale. At the pristine init most
/// gradients are scaled down through the near-zero head and fall below what
/// central differences can resolve at 64-bit; the gradcheck point must carry
/// measurable gradients on every path.
pub fn randomize_for_gradcheck<T: Scalar>(net: &mut WauNet<T>, seed: u64) {
    let mut rng = stream_rng(seed, 0xABCD);
    let names: Vec<String> = net
        .params
        .iter()
        .map(|(n, _)| String::from(n))
        .filter(|n| n.ends_with(".wo") || n.starts_with("head."))
        .collect();
    for name in names {
        let t = net.params.get_mut(&name).expect("name from iteration");
        let shape = t.shape().to_vec();
        let fan_in = shape[1.min(shape.len() - 1)].max(1);
        let bound = (3.0 / fan_in as f64).sqrt();
        *t = Tensor::uniform(&shape, -bound, bound, &mut rng);
    }
}

/// Channel-concatenates feature maps and projects them with a 1x1
/// convolution; the weight's output extent decides the fused channel count.
pub fn fuse<T: Scalar>(
    g: &mut Graph<T>,
    maps: &[VarId],
    weight: VarId,
    bias: VarId,
) -> Result<VarId> {
    if maps.is_empty() {
        return Err(Error::Usage("fuse of zero feature maps".into()));
    }
    let ws = g.shape(weight).to_vec();
    if ws.len() != 4 || ws[2] != 1 || ws[3] != 1 {
        return Err(Error::Shape(format!(
            "fuse expects a 1x1 conv weight, got {ws:?}"
        )));
    }
    let cat = if maps.len() == 1 {
        maps[0]
    } else {
        g.concat(maps, 1)?
    };
    let projected = g.conv2d(cat, weight, 1, 0)?;
    g.bias_add_chan(projected, bias)
}

/// Per-pixel argmax over class logits `[N,K,H,W]`; ties break toward the
/// smaller class id so uniform logits predict background.
pub fn predict_labels<T: Scalar>(logits: &Tensor<T>, spacing: (f64, f64)) -> Result<Vec<LabelMap>> {
    if logits.rank() != 4 {
        return Err(Error::Shape(format!(
            "predict_labels: expected [N,K,H,W], got {:?}",
            logits.shape()
        )));
    }
    let (n, k, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    if k < 2 {
        return Err(Error::Shape("predict_labels: needs K >= 2".into()));
    }
    if k > 256 {
        return Err(Error::Shape("predict_labels: at most 256 classes".into()));
    }
    let data = logits.data();
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for ni in 0..n {
        let mut labels = alloc::vec![0u8; plane];
        for p in 0..plane {
            let base = ni * k * plane + p;
            let mut best_c = 0usize;
            let mut best_v = data[base];
            for c in 1..k {
                let v = data[base + c * plane];
                if v > best_v {
                    best_v = v;
                    best_c = c;
                }
            }
            labels[p] = best_c as u8;
        }
        out.push(LabelMap::new(h, w, labels, spacing)?);
    }
    Ok(out)
}

/// Flattens per-case label maps into the row-major `[N,H,W]` class-id buffer
/// the cross-entropy op consumes.
pub fn labels_to_targets(labels: &[&LabelMap]) -> Vec<u32> {
    let mut out = Vec::new();
    for map in labels {
        out.extend(map.data().iter().map(|&c| c as u32));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_config_validates() {
        NetConfig::desk().validate().unwrap();
        NetConfig::paper().validate().unwrap();
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = NetConfig::desk();
        c.input_size = 30; // not divisible by 4
        assert!(c.validate().is_err());
        let mut c = NetConfig::desk();
        c.filters = alloc::vec![8, 16];
        assert!(c.validate().is_err());
        let mut c = NetConfig::desk();
        c.num_classes = 1;
        assert!(c.validate().is_err());
        let mut c = NetConfig::desk();
        c.heads = 3; // does not divide 8
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_exists_exactly_on_triangle() {
        let net = build_waunet::<f32>(&NetConfig::desk(), 1).unwrap();
        let nodes = net.node_grid();
        for n in &nodes {
            assert!(n.level + n.column <= net.config.levels - 1);
        }
        // every (i,j) with i+j <= levels-1 present exactly once
        let levels = net.config.levels;
        assert_eq!(nodes.len(), levels * (levels + 1) / 2);
        // one attended node per level
        for i in 0..levels {
            assert_eq!(nodes.iter().filter(|n| n.level == i && n.attended).count(), 1);
        }
    }

    #[test]
    fn predict_labels_uniform_logits_are_background() {
        let logits = Tensor::<f32>::zeros(&[1, 4, 3, 3]);
        let maps = predict_labels(&logits, (1.0, 1.0)).unwrap();
        assert!(maps[0].data().iter().all(|&c| c == 0));
    }

    #[test]
    fn predict_labels_recovers_one_hot() {
        let mut logits = Tensor::<f32>::zeros(&[1, 3, 2, 2]);
        // pixel (0,0) -> class 2, (0,1) -> class 1, rest background
        let plane = 4;
        logits.data_mut()[2 * plane] = 5.0;
        logits.data_mut()[plane + 1] = 3.0;
        let maps = predict_labels(&logits, (1.0, 1.0)).unwrap();
        assert_eq!(maps[0].get(0, 0), 2);
        assert_eq!(maps[0].get(0, 1), 1);
        assert_eq!(maps[0].get(1, 1), 0);
    }
}

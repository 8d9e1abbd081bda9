//! Convolution family: cross-correlation, 2x2 max pooling, transposed
//! convolution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::{shape_string, Tensor};

impl<T: Scalar> Graph<T> {
    /// 2D cross-correlation of `x: [N,Cin,H,W]` with `w: [Cout,Cin,kh,kw]`.
    ///
    /// Output extents must divide out exactly:
    /// `H' = (H + 2*pad - kh)/stride + 1`, and likewise for width.
    pub fn conv2d(&mut self, x: VarId, w: VarId, stride: usize, pad: usize) -> Result<VarId> {
        self.check_id(x)?;
        self.check_id(w)?;
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 4 || tw.rank() != 4 {
            return Err(Error::Shape(format!(
                "conv2d: x {} w {}",
                shape_string(tx.shape()),
                shape_string(tw.shape())
            )));
        }
        if tx.shape()[1] != tw.shape()[1] {
            return Err(Error::Shape(format!(
                "conv2d: input has {} channels but kernel expects {}",
                tx.shape()[1],
                tw.shape()[1]
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d: stride must be >= 1".into()));
        }
        let (n, cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let (cout, kh, kw) = (tw.shape()[0], tw.shape()[2], tw.shape()[3]);
        let out_h = conv_out_extent(h, kh, stride, pad)?;
        let out_w = conv_out_extent(wd, kw, stride, pad)?;

        let mut data = vec![T::zero(); n * cout * out_h * out_w];
        let xd = tx.data();
        let wdta = tw.data();
        for ni in 0..n {
            for co in 0..cout {
                let out_base = (ni * cout + co) * out_h * out_w;
                for ci in 0..cin {
                    let in_base = (ni * cin + ci) * h * wd;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let wv = wdta[((co * cin + ci) * kh + ky) * kw + kx];
                            if wv == T::zero() {
                                continue;
                            }
                            for oy in 0..out_h {
                                let iy = oy * stride + ky;
                                if iy < pad || iy - pad >= h {
                                    continue;
                                }
                                let in_row = in_base + (iy - pad) * wd;
                                let out_row = out_base + oy * out_w;
                                for ox in 0..out_w {
                                    let ix = ox * stride + kx;
                                    if ix < pad || ix - pad >= wd {
                                        continue;
                                    }
                                    data[out_row + ox] += wv * xd[in_row + ix - pad];
                                }
                            }
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(vec![n, cout, out_h, out_w], data)?;
        Ok(self.push_op(out, Op::Conv2d { stride, pad }, vec![x, w]))
    }

    /// 2x2 max pooling with stride 2. Ties send the gradient to the first
    /// maximum in row-major window order.
    pub fn maxpool2x2(&mut self, x: VarId) -> Result<VarId> {
        self.check_id(x)?;
        let tx = self.value(x);
        if tx.rank() != 4 {
            return Err(Error::Shape(format!(
                "maxpool2x2: expected [N,C,H,W], got {}",
                shape_string(tx.shape())
            )));
        }
        let (n, c, h, w) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2x2: extents must be even, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xd = tx.data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0u32; data.len()];
        for plane in 0..n * c {
            let in_base = plane * h * w;
            let out_base = plane * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = in_base + (2 * oy) * w + 2 * ox;
                    // row-major scan keeps the first maximum on ties
                    let cands = [i00, i00 + 1, i00 + w, i00 + w + 1];
                    let mut best = cands[0];
                    for &cand in &cands[1..] {
                        if xd[cand] > xd[best] {
                            best = cand;
                        }
                    }
                    data[out_base + oy * ow + ox] = xd[best];
                    argmax[out_base + oy * ow + ox] = best as u32;
                }
            }
        }
        let mut mask = 0u64;
        for (i, &a) in argmax.iter().enumerate() {
            mask = mask.rotate_left(7) ^ ((a as u64) << (i % 17));
        }
        self.note_branch(mask);
        let out = Tensor::from_vec(vec![n, c, oh, ow], data)?;
        Ok(self.push_op(out, Op::MaxPool2x2 { argmax }, vec![x]))
    }

    /// Transposed convolution with a 2x2 kernel and stride 2 (the network's
    /// only up-sampling configuration): `x: [N,Cin,H,W]`, `w: [Cin,Cout,2,2]`
    /// producing `[N,Cout,2H,2W]`.
    pub fn deconv2d(&mut self, x: VarId, w: VarId) -> Result<VarId> {
        self.check_id(x)?;
        self.check_id(w)?;
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 4 || tw.rank() != 4 || tw.shape()[2] != 2 || tw.shape()[3] != 2 {
            return Err(Error::Shape(format!(
                "deconv2d: x {} w {} (kernel must be 2x2)",
                shape_string(tx.shape()),
                shape_string(tw.shape())
            )));
        }
        if tx.shape()[1] != tw.shape()[0] {
            return Err(Error::Shape(format!(
                "deconv2d: input has {} channels but kernel expects {}",
                tx.shape()[1],
                tw.shape()[0]
            )));
        }
        let (n, cin, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2], tx.shape()[3]);
        let cout = tw.shape()[1];
        let (oh, ow) = (2 * h, 2 * wd);
        let xd = tx.data();
        let wdta = tw.data();
        let mut data = vec![T::zero(); n * cout * oh * ow];
        for ni in 0..n {
            for ci in 0..cin {
                let in_base = (ni * cin + ci) * h * wd;
                for co in 0..cout {
                    let out_base = (ni * cout + co) * oh * ow;
                    let wbase = (ci * cout + co) * 4;
                    let (w00, w01, w10, w11) =
                        (wdta[wbase], wdta[wbase + 1], wdta[wbase + 2], wdta[wbase + 3]);
                    for iy in 0..h {
                        let src = in_base + iy * wd;
                        let dst0 = out_base + (2 * iy) * ow;
                        let dst1 = dst0 + ow;
                        for ix in 0..wd {
                            let v = xd[src + ix];
                            data[dst0 + 2 * ix] += v * w00;
                            data[dst0 + 2 * ix + 1] += v * w01;
                            data[dst1 + 2 * ix] += v * w10;
                            data[dst1 + 2 * ix + 1] += v * w11;
                        }
                    }
                }
            }
        }
        let out = Tensor::from_vec(vec![n, cout, oh, ow], data)?;
        Ok(self.push_op(out, Op::Deconv2d, vec![x, w]))
    }
}

fn conv_out_extent(len: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = len + 2 * pad;
    if k == 0 || padded < k || (padded - k) % stride != 0 {
        return Err(Error::Shape(format!(
            "conv2d: extent {len} with kernel {k}, stride {stride}, pad {pad} \
             does not produce an integral output size"
        )));
    }
    Ok((padded - k) / stride + 1)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
    out_shape: &[usize],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (out_h, out_w) = (out_shape[2], out_shape[3]);
    let xd = x.data();
    let wdta = w.data();
    let need_dx = needs(ins[0]);
    let need_dw = needs(ins[1]);
    let mut dx = if need_dx { vec![T::zero(); xd.len()] } else { Vec::new() };
    let mut dw = if need_dw { vec![T::zero(); wdta.len()] } else { Vec::new() };

    for ni in 0..n {
        for co in 0..cout {
            let out_base = (ni * cout + co) * out_h * out_w;
            for ci in 0..cin {
                let in_base = (ni * cin + ci) * h * wd;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((co * cin + ci) * kh + ky) * kw + kx;
                        let wv = wdta[widx];
                        let mut wacc = T::zero();
                        for oy in 0..out_h {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let in_row = in_base + (iy - pad) * wd;
                            let out_row = out_base + oy * out_w;
                            for ox in 0..out_w {
                                let ix = ox * stride + kx;
                                if ix < pad || ix - pad >= wd {
                                    continue;
                                }
                                let g = out_grad[out_row + ox];
                                if need_dx {
                                    dx[in_row + ix - pad] += g * wv;
                                }
                                if need_dw {
                                    wacc += g * xd[in_row + ix - pad];
                                }
                            }
                        }
                        if need_dw {
                            dw[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
    let mut res = Vec::new();
    if need_dx {
        res.push((ins[0], dx));
    }
    if need_dw {
        res.push((ins[1], dw));
    }
    res
}

pub(crate) fn maxpool_backward<T: Scalar>(
    in_numel: usize,
    argmax: &[u32],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    if !needs(ins[0]) {
        return Vec::new();
    }
    let mut dx = vec![T::zero(); in_numel];
    for (&idx, &g) in argmax.iter().zip(out_grad.iter()) {
        dx[idx as usize] += g;
    }
    vec![(ins[0], dx)]
}

pub(crate) fn deconv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    out_shape: &[usize],
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let cout = w.shape()[1];
    let ow = out_shape[3];
    let xd = x.data();
    let wdta = w.data();
    let need_dx = needs(ins[0]);
    let need_dw = needs(ins[1]);
    let mut dx = if need_dx { vec![T::zero(); xd.len()] } else { Vec::new() };
    let mut dw = if need_dw { vec![T::zero(); wdta.len()] } else { Vec::new() };

    for ni in 0..n {
        for ci in 0..cin {
            let in_base = (ni * cin + ci) * h * wd;
            for co in 0..cout {
                let out_base = (ni * cout + co) * (2 * h) * ow;
                let wbase = (ci * cout + co) * 4;
                let mut wg = [T::zero(); 4];
                for iy in 0..h {
                    let src = in_base + iy * wd;
                    let dst0 = out_base + (2 * iy) * ow;
                    let dst1 = dst0 + ow;
                    for ix in 0..wd {
                        let g = [
                            out_grad[dst0 + 2 * ix],
                            out_grad[dst0 + 2 * ix + 1],
                            out_grad[dst1 + 2 * ix],
                            out_grad[dst1 + 2 * ix + 1],
                        ];
                        if need_dx {
                            dx[src + ix] += g[0] * wdta[wbase]
                                + g[1] * wdta[wbase + 1]
                                + g[2] * wdta[wbase + 2]
                                + g[3] * wdta[wbase + 3];
                        }
                        if need_dw {
                            let v = xd[src + ix];
                            wg[0] += g[0] * v;
                            wg[1] += g[1] * v;
                            wg[2] += g[2] * v;
                            wg[3] += g[3] * v;
                        }
                    }
                }
                if need_dw {
                    for t in 0..4 {
                        dw[wbase + t] += wg[t];
                    }
                }
            }
        }
    }
    let mut res = Vec::new();
    if need_dx {
        res.push((ins[0], dx));
    }
    if need_dw {
        res.push((ins[1], dw));
    }
    res
}

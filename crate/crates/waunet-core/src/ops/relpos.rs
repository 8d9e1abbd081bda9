//! Relative positional encoding primitives for axial attention.
//!
//! Operands are laid out per head: `[B*heads, L, d_k]` with the head index
//! varying fastest in the batch dimension, and a shared table
//! `[2L-1, heads*d_k]` indexed by relative offset `key_pos - query_pos + L-1`.
//! Head `h` reads columns `h*d_k .. (h+1)*d_k` of the table.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Graph, VarId};
use crate::ops::Op;
use crate::scalar::Scalar;
use crate::tensor::{shape_string, Tensor};

fn check_rel_shapes<T: Scalar>(
    lanes_shape: &[usize],
    table: &Tensor<T>,
    heads: usize,
    d_k: usize,
    axis_len: usize,
    what: &str,
) -> Result<()> {
    if lanes_shape.len() != 3 {
        return Err(Error::Shape(format!(
            "{what}: expected [B*heads, L, d_k], got {}",
            shape_string(lanes_shape)
        )));
    }
    if heads == 0 || lanes_shape[0] % heads != 0 {
        return Err(Error::Shape(format!(
            "{what}: batch {} not divisible by heads {heads}",
            lanes_shape[0]
        )));
    }
    if table.rank() != 2 || table.shape()[1] != heads * d_k {
        return Err(Error::Shape(format!(
            "{what}: table {} does not match heads {heads} x d_k {d_k}",
            shape_string(table.shape())
        )));
    }
    if table.shape()[0] != 2 * axis_len - 1 {
        return Err(Error::Config(format!(
            "{what}: positional table covers {} offsets but axis length {axis_len} needs {}",
            table.shape()[0],
            2 * axis_len - 1
        )));
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    /// Query-positional logits: `out[b,j,w] = q[b,j,:] . table[w-j+L-1, head(b)]`.
    pub fn rel_logits_q(&mut self, q: VarId, table: VarId, heads: usize) -> Result<VarId> {
        self.check_id(q)?;
        self.check_id(table)?;
        let (tq, tt) = (self.value(q), self.value(table));
        let (b, l, dk) = (tq.shape()[0], tq.shape()[1], tq.shape()[2]);
        check_rel_shapes::<T>(tq.shape(), tt, heads, dk, l, "rel_logits_q")?;
        let qd = tq.data();
        let td = tt.data();
        let tw = tt.shape()[1];
        let mut data = vec![T::zero(); b * l * l];
        for bi in 0..b {
            let hoff = (bi % heads) * dk;
            for j in 0..l {
                let qrow = &qd[(bi * l + j) * dk..(bi * l + j + 1) * dk];
                for w in 0..l {
                    let o = w + l - 1 - j;
                    let trow = &td[o * tw + hoff..o * tw + hoff + dk];
                    let mut acc = T::zero();
                    for (&qv, &tv) in qrow.iter().zip(trow.iter()) {
                        acc += qv * tv;
                    }
                    data[(bi * l + j) * l + w] = acc;
                }
            }
        }
        let out = Tensor::from_vec(vec![b, l, l], data)?;
        Ok(self.push_op(out, Op::RelLogitsQ { heads }, vec![q, table]))
    }

    /// Key-positional logits: `out[b,j,w] = k[b,w,:] . table[w-j+L-1, head(b)]`.
    pub fn rel_logits_k(&mut self, k: VarId, table: VarId, heads: usize) -> Result<VarId> {
        self.check_id(k)?;
        self.check_id(table)?;
        let (tk, tt) = (self.value(k), self.value(table));
        let (b, l, dk) = (tk.shape()[0], tk.shape()[1], tk.shape()[2]);
        check_rel_shapes::<T>(tk.shape(), tt, heads, dk, l, "rel_logits_k")?;
        let kd = tk.data();
        let td = tt.data();
        let tw = tt.shape()[1];
        let mut data = vec![T::zero(); b * l * l];
        for bi in 0..b {
            let hoff = (bi % heads) * dk;
            for j in 0..l {
                for w in 0..l {
                    let o = w + l - 1 - j;
                    let krow = &kd[(bi * l + w) * dk..(bi * l + w + 1) * dk];
                    let trow = &td[o * tw + hoff..o * tw + hoff + dk];
                    let mut acc = T::zero();
                    for (&kv, &tv) in krow.iter().zip(trow.iter()) {
                        acc += kv * tv;
                    }
                    data[(bi * l + j) * l + w] = acc;
                }
            }
        }
        let out = Tensor::from_vec(vec![b, l, l], data)?;
        Ok(self.push_op(out, Op::RelLogitsK { heads }, vec![k, table]))
    }

    /// Positional value aggregation:
    /// `out[b,j,:] = sum_w attn[b,j,w] * table[w-j+L-1, head(b)]`.
    pub fn rel_values(&mut self, attn: VarId, table: VarId, heads: usize) -> Result<VarId> {
        self.check_id(attn)?;
        self.check_id(table)?;
        let (ta, tt) = (self.value(attn), self.value(table));
        if ta.rank() != 3 || ta.shape()[1] != ta.shape()[2] {
            return Err(Error::Shape(format!(
                "rel_values: expected square attention [B*heads, L, L], got {}",
                shape_string(ta.shape())
            )));
        }
        let (b, l) = (ta.shape()[0], ta.shape()[1]);
        if heads == 0 || b % heads != 0 || tt.rank() != 2 || tt.shape()[1] % heads != 0 {
            return Err(Error::Shape(format!(
                "rel_values: attn {} table {} heads {heads}",
                shape_string(ta.shape()),
                shape_string(tt.shape())
            )));
        }
        let dk = tt.shape()[1] / heads;
        check_rel_shapes::<T>(&[b, l, dk], tt, heads, dk, l, "rel_values")?;
        let ad = ta.data();
        let td = tt.data();
        let tw = tt.shape()[1];
        let mut data = vec![T::zero(); b * l * dk];
        for bi in 0..b {
            let hoff = (bi % heads) * dk;
            for j in 0..l {
                let out_row = (bi * l + j) * dk;
                for w in 0..l {
                    let a = ad[(bi * l + j) * l + w];
                    let o = w + l - 1 - j;
                    let trow = &td[o * tw + hoff..o * tw + hoff + dk];
                    for (d, &tv) in trow.iter().enumerate() {
                        data[out_row + d] += a * tv;
                    }
                }
            }
        }
        let out = Tensor::from_vec(vec![b, l, dk], data)?;
        Ok(self.push_op(out, Op::RelValues { heads }, vec![attn, table]))
    }
}

pub(crate) fn rel_logits_q_backward<T: Scalar>(
    q: &Tensor<T>,
    table: &Tensor<T>,
    heads: usize,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (b, l, dk) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let qd = q.data();
    let td = table.data();
    let tw = table.shape()[1];
    let need_dq = needs(ins[0]);
    let need_dt = needs(ins[1]);
    let mut dq = if need_dq { vec![T::zero(); qd.len()] } else { Vec::new() };
    let mut dt = if need_dt { vec![T::zero(); td.len()] } else { Vec::new() };
    for bi in 0..b {
        let hoff = (bi % heads) * dk;
        for j in 0..l {
            let qrow = (bi * l + j) * dk;
            for w in 0..l {
                let g = out_grad[(bi * l + j) * l + w];
                let o = w + l - 1 - j;
                for d in 0..dk {
                    if need_dq {
                        dq[qrow + d] += g * td[o * tw + hoff + d];
                    }
                    if need_dt {
                        dt[o * tw + hoff + d] += g * qd[qrow + d];
                    }
                }
            }
        }
    }
    collect_pair(ins, dq, dt, need_dq, need_dt)
}

pub(crate) fn rel_logits_k_backward<T: Scalar>(
    k: &Tensor<T>,
    table: &Tensor<T>,
    heads: usize,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (b, l, dk) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let kd = k.data();
    let td = table.data();
    let tw = table.shape()[1];
    let need_dk = needs(ins[0]);
    let need_dt = needs(ins[1]);
    let mut dkv = if need_dk { vec![T::zero(); kd.len()] } else { Vec::new() };
    let mut dt = if need_dt { vec![T::zero(); td.len()] } else { Vec::new() };
    for bi in 0..b {
        let hoff = (bi % heads) * dk;
        for j in 0..l {
            for w in 0..l {
                let g = out_grad[(bi * l + j) * l + w];
                let o = w + l - 1 - j;
                let krow = (bi * l + w) * dk;
                for d in 0..dk {
                    if need_dk {
                        dkv[krow + d] += g * td[o * tw + hoff + d];
                    }
                    if need_dt {
                        dt[o * tw + hoff + d] += g * kd[krow + d];
                    }
                }
            }
        }
    }
    collect_pair(ins, dkv, dt, need_dk, need_dt)
}

pub(crate) fn rel_values_backward<T: Scalar>(
    attn: &Tensor<T>,
    table: &Tensor<T>,
    heads: usize,
    out_grad: &[T],
    ins: &[VarId],
    needs: &dyn Fn(VarId) -> bool,
) -> Vec<(VarId, Vec<T>)> {
    let (b, l) = (attn.shape()[0], attn.shape()[1]);
    let tw = table.shape()[1];
    let dk = tw / heads;
    let ad = attn.data();
    let td = table.data();
    let need_da = needs(ins[0]);
    let need_dt = needs(ins[1]);
    let mut da = if need_da { vec![T::zero(); ad.len()] } else { Vec::new() };
    let mut dt = if need_dt { vec![T::zero(); td.len()] } else { Vec::new() };
    for bi in 0..b {
        let hoff = (bi % heads) * dk;
        for j in 0..l {
            let grow = (bi * l + j) * dk;
            for w in 0..l {
                let o = w + l - 1 - j;
                let mut acc = T::zero();
                for d in 0..dk {
                    let g = out_grad[grow + d];
                    acc += g * td[o * tw + hoff + d];
                    if need_dt {
                        dt[o * tw + hoff + d] += g * ad[(bi * l + j) * l + w];
                    }
                }
                if need_da {
                    da[(bi * l + j) * l + w] = acc;
                }
            }
        }
    }
    collect_pair(ins, da, dt, need_da, need_dt)
}

fn collect_pair<T>(
    ins: &[VarId],
    first: Vec<T>,
    second: Vec<T>,
    need_first: bool,
    need_second: bool,
) -> Vec<(VarId, Vec<T>)> {
    let mut res = Vec::new();
    if need_first {
        res.push((ins[0], first));
    }
    if need_second {
        res.push((ins[1], second));
    }
    res
}

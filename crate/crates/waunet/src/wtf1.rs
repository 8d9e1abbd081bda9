//! The WTF1 tensor file format.
//!
//! Layout: 8-byte magic `WAUTNSR1`, a dtype code byte (0 = f32, 1 = f64,
//! 2 = u8), a rank byte, `rank` little-endian u32 extents, then the row-major
//! payload in little-endian order.

use std::fs;
use std::path::Path;

use waunet_core::{DType, Tensor};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"WAUTNSR1";

/// A decoded WTF1 payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Wtf1 {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl Wtf1 {
    pub fn dtype(&self) -> DType {
        match self {
            Wtf1::F32(_) => DType::F32,
            Wtf1::F64(_) => DType::F64,
            Wtf1::U8 { .. } => DType::U8,
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Wtf1::F32(t) => t.shape().to_vec(),
            Wtf1::F64(t) => t.shape().to_vec(),
            Wtf1::U8 { shape, .. } => shape.clone(),
        }
    }
}

pub fn encode(payload: &Wtf1) -> Vec<u8> {
    let shape = payload.shape();
    let mut out = Vec::with_capacity(10 + 4 * shape.len());
    out.extend_from_slice(MAGIC);
    out.push(payload.dtype().code());
    out.push(shape.len() as u8);
    for &e in &shape {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    match payload {
        Wtf1::F32(t) => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Wtf1::F64(t) => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Wtf1::U8 { data, .. } => out.extend_from_slice(data),
    }
    out
}

pub fn decode(bytes: &[u8], origin: &Path) -> Result<Wtf1> {
    let fail = |reason: &str| AppError::format(origin, reason);
    if bytes.len() < 10 {
        return Err(fail("truncated header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(fail("bad magic, not a WTF1 file"));
    }
    let dtype = DType::from_code(bytes[8]).ok_or_else(|| fail("unknown dtype code"))?;
    let rank = bytes[9] as usize;
    let header = 10 + 4 * rank;
    if bytes.len() < header {
        return Err(fail("truncated extent list"));
    }
    let mut shape = Vec::with_capacity(rank);
    for d in 0..rank {
        let mut ext = [0u8; 4];
        ext.copy_from_slice(&bytes[10 + 4 * d..14 + 4 * d]);
        let e = u32::from_le_bytes(ext) as usize;
        if e == 0 {
            return Err(fail("zero extent"));
        }
        shape.push(e);
    }
    let numel: usize = shape.iter().product();
    let payload = &bytes[header..];
    let elem = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
        DType::U8 => 1,
    };
    if payload.len() != numel * elem {
        return Err(fail(&format!(
            "payload is {} bytes but shape {:?} needs {}",
            payload.len(),
            shape,
            numel * elem
        )));
    }
    Ok(match dtype {
        DType::F32 => {
            let data: Vec<f32> = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Wtf1::F32(Tensor::from_vec(shape, data).map_err(AppError::Core)?)
        }
        DType::F64 => {
            let data: Vec<f64> = payload
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
                .collect();
            Wtf1::F64(Tensor::from_vec(shape, data).map_err(AppError::Core)?)
        }
        DType::U8 => Wtf1::U8 {
            shape,
            data: payload.to_vec(),
        },
    })
}

pub fn write(path: &Path, payload: &Wtf1) -> Result<()> {
    fs::write(path, encode(payload)).map_err(|e| AppError::io(path, e))
}

pub fn read(path: &Path) -> Result<Wtf1> {
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

//! Checkpoint directories: a JSON manifest plus one WTF1 payload per
//! parameter (and per Adam moment). Save/load round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use waunet_core::net::{NetConfig, WauNet};
use waunet_core::optim::AdamState;
use waunet_core::params::ParamStore;
use waunet_core::{DType, Scalar, Tensor};

use crate::error::{AppError, Result};
use crate::trainer::TrainSettings;
use crate::wtf1::{self, Wtf1};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    /// "f32" or "f64"; payload files must match.
    pub dtype: String,
    pub net: NetConfig,
    pub train: TrainSettings,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub params: Vec<ParamMeta>,
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

fn dtype_name<T: Scalar>() -> &'static str {
    match T::DTYPE {
        DType::F32 => "f32",
        DType::F64 => "f64",
        DType::U8 => unreachable!("no u8 parameters"),
    }
}

fn tensor_payload<T: Scalar>(t: &Tensor<T>) -> Wtf1 {
    match T::DTYPE {
        DType::F32 => Wtf1::F32(t.cast::<f32>()),
        _ => Wtf1::F64(t.cast::<f64>()),
    }
}

fn payload_tensor<T: Scalar>(payload: Wtf1, origin: &Path) -> Result<Tensor<T>> {
    match (payload, T::DTYPE) {
        (Wtf1::F32(t), DType::F32) => Ok(t.cast::<T>()),
        (Wtf1::F64(t), DType::F64) => Ok(t.cast::<T>()),
        (other, want) => Err(AppError::format(
            origin,
            format!("expected {want:?} payload, found {:?}", other.dtype()),
        )),
    }
}

pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    net: &WauNet<T>,
    adam: &AdamState<T>,
    train: &TrainSettings,
    loss_history: &[f64],
) -> Result<()> {
    let params_dir = dir.join("params");
    let optim_dir = dir.join("optim");
    fs::create_dir_all(&params_dir).map_err(|e| AppError::io(&params_dir, e))?;
    fs::create_dir_all(&optim_dir).map_err(|e| AppError::io(&optim_dir, e))?;

    let mut metas = Vec::new();
    for (i, (name, tensor)) in net.params.iter().enumerate() {
        metas.push(ParamMeta {
            name: name.to_string(),
            shape: tensor.shape().to_vec(),
        });
        wtf1::write(&params_dir.join(format!("{name}.wtf1")), &tensor_payload(tensor))?;
        wtf1::write(
            &optim_dir.join(format!("{name}.m.wtf1")),
            &tensor_payload(&adam.m[i]),
        )?;
        wtf1::write(
            &optim_dir.join(format!("{name}.v.wtf1")),
            &tensor_payload(&adam.v[i]),
        )?;
    }
    let manifest = CheckpointManifest {
        dtype: dtype_name::<T>().to_string(),
        net: net.config.clone(),
        train: train.clone(),
        step: adam.step,
        params: metas,
        loss_history: loss_history.to_vec(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AppError::Runtime(format!("manifest serialization: {e}")))?;
    fs::write(&path, json).map_err(|e| AppError::io(&path, e))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| AppError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| AppError::format(&path, e.to_string()))
}

pub fn load_checkpoint<T: Scalar>(
    dir: &Path,
) -> Result<(WauNet<T>, AdamState<T>, CheckpointManifest)> {
    let manifest = read_manifest(dir)?;
    if manifest.dtype != dtype_name::<T>() {
        return Err(AppError::Usage(format!(
            "checkpoint {} holds {} parameters, requested {}",
            dir.display(),
            manifest.dtype,
            dtype_name::<T>()
        )));
    }
    manifest.net.validate().map_err(AppError::Core)?;

    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for meta in &manifest.params {
        let p_path = dir.join("params").join(format!("{}.wtf1", meta.name));
        let tensor: Tensor<T> = payload_tensor(wtf1::read(&p_path)?, &p_path)?;
        if tensor.shape() != meta.shape.as_slice() {
            return Err(AppError::format(
                &p_path,
                format!("shape {:?} does not match manifest {:?}", tensor.shape(), meta.shape),
            ));
        }
        params.insert(&meta.name, tensor).map_err(AppError::Core)?;
        let m_path = dir.join("optim").join(format!("{}.m.wtf1", meta.name));
        m.push(payload_tensor(wtf1::read(&m_path)?, &m_path)?);
        let v_path = dir.join("optim").join(format!("{}.v.wtf1", meta.name));
        v.push(payload_tensor(wtf1::read(&v_path)?, &v_path)?);
    }
    let net = WauNet {
        config: manifest.net.clone(),
        params,
    };
    let adam = AdamState {
        m,
        v,
        step: manifest.step,
    };
    Ok((net, adam, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use waunet_core::net::build_waunet;

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig {
            levels: 2,
            filters: vec![4, 8],
            attention_depths: vec![1, 1],
            heads: 2,
            num_classes: 3,
            input_size: 8,
            in_channels: 1,
            batch_norm: false,
        };
        let net = build_waunet::<f64>(&cfg, 3).unwrap();
        let adam = AdamState::new(&net.params);
        let settings = TrainSettings::default();
        let ck1 = dir.path().join("ck1");
        save_checkpoint(&ck1, &net, &adam, &settings, &[1.5, 1.2]).unwrap();

        let (net2, adam2, manifest) = load_checkpoint::<f64>(&ck1).unwrap();
        assert_eq!(manifest.step, 0);
        assert_eq!(manifest.loss_history, vec![1.5, 1.2]);

        let ck2 = dir.path().join("ck2");
        save_checkpoint(&ck2, &net2, &adam2, &manifest.train, &manifest.loss_history).unwrap();

        let read_tree = |d: &Path| -> Vec<(String, Vec<u8>)> {
            let mut out = Vec::new();
            let mut stack = vec![d.to_path_buf()];
            while let Some(p) = stack.pop() {
                for e in fs::read_dir(&p).unwrap() {
                    let e = e.unwrap().path();
                    if e.is_dir() {
                        stack.push(e);
                    } else {
                        let rel = e.strip_prefix(d).unwrap().to_string_lossy().into_owned();
                        out.push((rel, fs::read(&e).unwrap()));
                    }
                }
            }
            out.sort();
            out
        };
        assert_eq!(read_tree(&ck1), read_tree(&ck2));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = NetConfig {
            levels: 1,
            filters: vec![4],
            attention_depths: vec![1],
            heads: 2,
            num_classes: 2,
            input_size: 8,
            in_channels: 1,
            batch_norm: false,
        };
        let net = build_waunet::<f32>(&cfg, 3).unwrap();
        let adam = AdamState::new(&net.params);
        save_checkpoint(dir.path(), &net, &adam, &TrainSettings::default(), &[]).unwrap();
        assert!(load_checkpoint::<f64>(dir.path()).is_err());
        assert!(load_checkpoint::<f32>(dir.path()).is_ok());
    }
}

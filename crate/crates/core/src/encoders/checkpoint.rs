//! Encoder checkpoints: a safetensors file whose header metadata carries the
//! layer table, the seed and the training provenance.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::network::Encoder;
use super::spec::EncoderSpec;
use crate::error::{Error, Result};

/// Initialisation of every checkpoint written by this crate.
pub const SEED_INIT: &str = "seed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub objective: String,
    pub dataset: String,
    pub steps: usize,
    /// `"seed"` for parameters drawn from the seeded initialiser only.
    pub init: String,
    /// Free-form settings such as overridden learning rate or batch size.
    #[serde(default)]
    pub settings: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(objective: impl Into<String>, dataset: impl Into<String>, steps: usize) -> Self {
        Self {
            objective: objective.into(),
            dataset: dataset.into(),
            steps,
            init: SEED_INIT.into(),
            settings: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: EncoderSpec,
    pub seed: u64,
    pub provenance: Provenance,
    pub format_version: u32,
}

const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, encoder: &Encoder, provenance: &Provenance) -> Result<()> {
    let bytes = checkpoint_bytes(encoder, provenance)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Serialised checkpoint; byte-identical for identical parameters and metadata.
pub fn checkpoint_bytes(encoder: &Encoder, provenance: &Provenance) -> Result<Vec<u8>> {
    let meta = CheckpointMeta {
        spec: encoder.spec().clone(),
        seed: encoder.seed(),
        provenance: provenance.clone(),
        format_version: FORMAT_VERSION,
    };
    let json = serde_json::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let named = encoder.store().named_tensors();
    let mut raw: Vec<(String, Vec<usize>, Dtype, Vec<u8>)> = Vec::with_capacity(named.len());
    for (name, t) in named {
        let flat = t.flatten_all()?;
        let (dtype, bytes) = match t.dtype() {
            DType::F64 => (
                Dtype::F64,
                flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ),
            _ => (
                Dtype::F32,
                flat.to_dtype(DType::F32)?
                    .to_vec1::<f32>()?
                    .iter()
                    .flat_map(|v| v.to_le_bytes())
                    .collect(),
            ),
        };
        raw.push((name, t.dims().to_vec(), dtype, bytes));
    }
    let views = raw
        .iter()
        .map(|(name, shape, dtype, bytes)| {
            TensorView::new(*dtype, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut info = HashMap::new();
    info.insert("zsl.meta".to_string(), json);
    safetensors::serialize(views, Some(info)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn read_meta(bytes: &[u8]) -> Result<CheckpointMeta> {
    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get("zsl.meta"))
        .ok_or_else(|| Error::Checkpoint("file carries no encoder metadata".into()))?;
    serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<(Encoder, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    load_checkpoint_bytes(&bytes)
}

pub fn load_checkpoint_bytes(bytes: &[u8]) -> Result<(Encoder, CheckpointMeta)> {
    let meta = read_meta(bytes)?;
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = HashMap::new();
    let mut dtype = DType::F32;
    for (name, view) in st.tensors() {
        let t = match view.dtype() {
            Dtype::F32 => {
                let v: Vec<f32> = view
                    .data()
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                    .collect();
                Tensor::from_vec(v, view.shape(), &Device::Cpu)?
            }
            Dtype::F64 => {
                dtype = DType::F64;
                let v: Vec<f64> = view
                    .data()
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect();
                Tensor::from_vec(v, view.shape(), &Device::Cpu)?
            }
            other => return Err(Error::Checkpoint(format!("unsupported dtype {other:?} for `{name}`"))),
        };
        tensors.insert(name, t);
    }
    let mut encoder = Encoder::new(meta.spec.clone(), meta.seed, dtype)?;
    encoder.store_mut().load(&tensors)?;
    Ok((encoder, meta))
}

/// Refuses checkpoints that were not trained from a seed on `dataset`.
pub fn check_zfs(meta: &CheckpointMeta, dataset: &str) -> Result<()> {
    if meta.provenance.init != SEED_INIT {
        return Err(Error::Zfs(format!(
            "checkpoint initialised from `{}`, not from a seed",
            meta.provenance.init
        )));
    }
    if meta.provenance.dataset != dataset {
        return Err(Error::Zfs(format!(
            "checkpoint was trained on `{}` but is used on `{dataset}`",
            meta.provenance.dataset
        )));
    }
    Ok(())
}

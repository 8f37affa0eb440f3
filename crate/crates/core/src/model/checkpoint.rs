//! Safetensors checkpoint with a single JSON header entry.
//!
//! The header lives under one metadata key so the file bytes do not depend on
//! hash-map iteration order.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ParamStore, PatchConfig};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;
pub const FORMAT: &str = "gasfm-checkpoint";
const HEADER_KEY: &str = "gasfm";

/// One training stage that updated parameters, with the customers it read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub stage: String,
    /// Partition label of the training data, if the run was partitioned.
    pub part: Option<String>,
    pub customers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub format: String,
    pub model: ModelConfig,
    pub patch: PatchConfig,
    #[serde(default)]
    pub lineage: Vec<LineageEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub lineage: Vec<LineageEntry>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self { model, lineage: Vec::new() }
    }

    /// Every customer id that influenced a parameter update.
    pub fn trained_customers(&self) -> impl Iterator<Item = &str> {
        self.lineage.iter().flat_map(|e| e.customers.iter().map(String::as_str))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            schema_version: SCHEMA_VERSION,
            format: FORMAT.to_string(),
            model: self.model.cfg.clone(),
            patch: self.model.patch,
            lineage: self.lineage.clone(),
        };
        let mut buffers: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        for (name, t) in self.model.params.iter() {
            let values = t.flatten_all()?.to_vec1::<f64>()?;
            let bytes = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            buffers.push((name.to_string(), t.dims().to_vec(), bytes));
        }
        let views = buffers
            .iter()
            .map(|(n, shape, bytes)| {
                TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([(HEADER_KEY.to_string(), serde_json::to_string(&header)?)]);
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let raw = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get(HEADER_KEY))
            .ok_or_else(|| Error::Checkpoint("missing header".into()))?;
        let header: CheckpointHeader = serde_json::from_str(raw)?;
        if header.format != FORMAT {
            return Err(Error::IncompatibleCheckpoint {
                field: "format".into(),
                found: header.format,
                expected: FORMAT.into(),
            });
        }
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::IncompatibleCheckpoint {
                field: "schema_version".into(),
                found: header.schema_version.to_string(),
                expected: SCHEMA_VERSION.to_string(),
            });
        }
        let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut params = ParamStore::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 {
                return Err(Error::Checkpoint(format!("`{name}` is {:?}, expected F64", view.dtype())));
            }
            let values: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = candle_core::Tensor::from_vec(values, view.shape(), &candle_core::Device::Cpu)?;
            params.insert(name, t)?;
        }
        let model = Model::from_params(header.model, header.patch, params)?;
        Ok(Self { model, lineage: header.lineage })
    }

    /// Writes to a temporary sibling and renames, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("safetensors.tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Errors naming the first field where the checkpoint's window geometry
    /// differs from `expected`.
    pub fn check_patch(&self, expected: &PatchConfig) -> Result<()> {
        let found = &self.model.patch;
        let fields = [
            ("window_len", found.window_len, expected.window_len),
            ("patch_len", found.patch_len, expected.patch_len),
            ("patch_stride", found.patch_stride, expected.patch_stride),
        ];
        for (field, f, e) in fields {
            if f != e {
                return Err(Error::IncompatibleCheckpoint {
                    field: field.into(),
                    found: f.to_string(),
                    expected: e.to_string(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Model {
        let cfg = ModelConfig { model_dim: 8, heads: 2, encoder_layers: 1, feedforward_dim: 16, ..ModelConfig::default() };
        let mut m = Model::new(cfg, PatchConfig::default()).unwrap();
        m.init_forecast_head(7, 3).unwrap();
        m
    }

    #[test]
    fn round_trip_is_exact_and_stable() {
        let mut ck = Checkpoint::new(tiny());
        ck.lineage.push(LineageEntry { stage: "pretrain".into(), part: Some("I".into()), customers: vec!["C00001".into()] });
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.lineage, ck.lineage);
        assert_eq!(back.model.cfg, ck.model.cfg);
        for (name, t) in ck.model.params.iter() {
            let a = t.flatten_all().unwrap().to_vec1::<f64>().unwrap();
            assert_eq!(a, back.model.params.values_f64(name).unwrap(), "{name}");
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn geometry_mismatch_names_field() {
        let ck = Checkpoint::new(tiny());
        let other = PatchConfig { patch_stride: 4, ..PatchConfig::default() };
        match ck.check_patch(&other) {
            Err(Error::IncompatibleCheckpoint { field, .. }) => assert_eq!(field, "patch_stride"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
    }
}

//! JSON checkpoint: model config plus named parameter tensors.
//!
//! Numbers are written in shortest round-trip form and parsed back exactly,
//! so a reloaded model reproduces the saved one bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, ParamStore, ToyLm};
use super::tape::Mat;
use crate::error::{Error, Result};

pub const FORMAT: &str = "author-repr-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    /// `"toylm"` or `"hulm"`.
    pub kind: String,
    pub config: ModelConfig,
    /// Model-kind specific settings (the HuLM block settings).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extra: Option<serde_json::Value>,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(
        kind: &str,
        config: &ModelConfig,
        params: &ParamStore,
        extra: Option<serde_json::Value>,
    ) -> Checkpoint {
        Checkpoint {
            format: FORMAT.to_string(),
            kind: kind.to_string(),
            config: config.clone(),
            extra,
            tensors: params
                .iter()
                .map(|(name, m)| TensorRecord {
                    name: name.to_string(),
                    rows: m.rows,
                    cols: m.cols,
                    data: m.data.clone(),
                })
                .collect(),
        }
    }

    pub fn params(&self) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for t in &self.tensors {
            if t.data.len() != t.rows * t.cols {
                return Err(Error::Data(format!(
                    "tensor `{}` has a wrong element count",
                    t.name
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "tensor `{}` has non-finite values",
                    t.name
                )));
            }
            store.push(
                t.name.clone(),
                Mat::from_vec(t.rows, t.cols, t.data.clone()),
            );
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&raw)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT {
            return Err(Error::Data(format!(
                "unsupported checkpoint format `{}`",
                ck.format
            )));
        }
        Ok(ck)
    }
}

impl ToyLm {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::new("toylm", &self.config, &self.params, None).save(path)
    }

    pub fn load(path: &Path) -> Result<ToyLm> {
        let ck = Checkpoint::load(path)?;
        if ck.kind != "toylm" {
            return Err(Error::Data(format!(
                "checkpoint holds a `{}`, not a toylm",
                ck.kind
            )));
        }
        ToyLm::from_params(ck.config.clone(), ck.params()?)
    }
}

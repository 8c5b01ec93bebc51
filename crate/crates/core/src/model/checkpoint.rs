use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelError, ModelParams, Network, Regressor, TargetScaler};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized network: config, every named tensor and a SHA-256 over both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub target: TargetScaler,
    pub tensors: Vec<TensorRecord>,
    pub content_hash: String,
}

fn content_hash(
    config: &ModelConfig,
    target: &TargetScaler,
    tensors: &[TensorRecord],
) -> Result<String, ModelError> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config)?);
    h.update(target.mean.to_le_bytes());
    h.update(target.std.to_le_bytes());
    for t in tensors {
        h.update(t.name.as_bytes());
        for s in &t.shape {
            h.update((*s as u64).to_le_bytes());
        }
        for v in &t.data {
            h.update(v.to_le_bytes());
        }
    }
    Ok(hex::encode(h.finalize()))
}

impl Checkpoint {
    pub fn from_regressor(model: &Regressor) -> Result<Self, ModelError> {
        let net = &model.net;
        let tensors: Vec<TensorRecord> = net
            .params
            .tensors()
            .into_iter()
            .map(|t| TensorRecord {
                name: t.name,
                shape: t.shape,
                data: t.data.to_vec(),
            })
            .collect();
        let content_hash = content_hash(&net.config, &model.target, &tensors)?;
        Ok(Self {
            format_version: CHECKPOINT_VERSION,
            config: net.config.clone(),
            target: model.target,
            tensors,
            content_hash,
        })
    }

    pub fn into_regressor(self) -> Result<Regressor, ModelError> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if content_hash(&self.config, &self.target, &self.tensors)? != self.content_hash {
            return Err(ModelError::Checkpoint("content hash mismatch".into()));
        }
        self.config.validate()?;
        let mut params = ModelParams::zeros(&self.config);
        {
            let mut slots = params.tensors_mut();
            if slots.len() != self.tensors.len() {
                return Err(ModelError::Checkpoint(format!(
                    "{} tensors stored, {} expected",
                    self.tensors.len(),
                    slots.len()
                )));
            }
            for (slot, rec) in slots.iter_mut().zip(&self.tensors) {
                if slot.name != rec.name
                    || slot.shape != rec.shape
                    || slot.data.len() != rec.data.len()
                {
                    return Err(ModelError::Checkpoint(format!(
                        "tensor {} does not match {}",
                        rec.name, slot.name
                    )));
                }
                slot.data.copy_from_slice(&rec.data);
            }
        }
        Ok(Regressor {
            net: Network {
                config: self.config,
                params,
            },
            target: self.target,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

//! Model persistence. Checkpoints are JSON: diffable, small at desk
//! scale, and floats print in shortest-round-trip notation, so weights
//! survive save/load bit for bit.
//!
//! A model's parameter allocation order is deterministic, so the layout
//! needs no separate schema: reload re-runs initialization with the
//! stored dimensions and overwrites the tensors in order, refusing any
//! name or shape that disagrees.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cam::CamModel;
use crate::error::{CamError, Result};
use crate::rng::rng_for;
use crate::worlds::EnvKind;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub env: EnvKind,
    pub backbone: String,
    pub hidden: usize,
    pub gnn_layers: usize,
    /// Hash of the resolved config that produced the model. Consumers may
    /// refuse a checkpoint whose hash disagrees with their own config.
    pub config_hash: String,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    /// Non-finite weights are refused here: JSON cannot represent them,
    /// and a checkpoint that cannot round-trip must not be written.
    pub fn from_model(model: &CamModel, config_hash: &str) -> Result<Self> {
        model.store.check_finite()?;
        let params = model
            .store
            .iter()
            .map(|p| ParamRecord {
                name: p.name.clone(),
                shape: [p.rows, p.cols],
                values: p.values.clone(),
            })
            .collect();
        Ok(Checkpoint {
            format_version: FORMAT_VERSION,
            env: model.env,
            backbone: model.backbone.kind().to_string(),
            hidden: model.hidden,
            gnn_layers: model.gnn_layers,
            config_hash: config_hash.to_string(),
            params,
        })
    }

    pub fn to_model(&self) -> Result<CamModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(CamError::Config(format!(
                "checkpoint format {} unsupported, this build reads {}",
                self.format_version, FORMAT_VERSION
            )));
        }
        let mut model =
            CamModel::init(self.env, self.hidden, self.gnn_layers, &mut rng_for(0, "model", &[]))?;
        if model.backbone.kind() != self.backbone {
            return Err(CamError::Contract(format!(
                "checkpoint declares a {} backbone but env {} builds {}",
                self.backbone,
                self.env.name(),
                model.backbone.kind()
            )));
        }
        if model.store.len() != self.params.len() {
            return Err(CamError::Contract(format!(
                "checkpoint holds {} tensors, the model layout has {}",
                self.params.len(),
                model.store.len()
            )));
        }
        for (slot, rec) in model.store.iter_mut().zip(&self.params) {
            if slot.name != rec.name || [slot.rows, slot.cols] != rec.shape {
                return Err(CamError::Contract(format!(
                    "checkpoint tensor {} {:?} does not match layout slot {} [{}, {}]",
                    rec.name, rec.shape, slot.name, slot.rows, slot.cols
                )));
            }
            if rec.values.len() != slot.values.len() {
                return Err(CamError::Contract(format!(
                    "tensor {} carries {} values, its shape wants {}",
                    rec.name,
                    rec.values.len(),
                    slot.values.len()
                )));
            }
            slot.values.copy_from_slice(&rec.values);
        }
        model.store.check_finite()?;
        Ok(model)
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let text = serde_json::to_string(ck)
        .map_err(|e| CamError::Config(format!("checkpoint encode: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text)
        .map_err(|e| CamError::Config(format!("checkpoint {}: {e}", path.display())))
}

pub fn save_model(model: &CamModel, config_hash: &str, path: &Path) -> Result<()> {
    save_checkpoint(&Checkpoint::from_model(model, config_hash)?, path)
}

pub fn load_model(path: &Path) -> Result<CamModel> {
    load_checkpoint(path)?.to_model()
}

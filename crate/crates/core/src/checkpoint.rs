//! JSON checkpoints: encoder spec, lookup tables, parameter values with their
//! initialization records, and optionally the training state.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::encoders::{EncoderSpec, ImageMode, Tables};
use crate::error::{Error, Result};
use crate::joint::{CompatibilityModel, TrainState, TrainingConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: EncoderSpec,
    pub image_mode: ImageMode,
    pub feature_dim: usize,
    pub tables: Tables,
    pub params: ParamStore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TrainState>,
}

impl Checkpoint {
    pub fn capture(
        model: &CompatibilityModel,
        training: Option<&TrainingConfig>,
        state: Option<&TrainState>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            spec: model.text_encoder().spec().clone(),
            image_mode: model.image_encoder().mode(),
            feature_dim: model.image_encoder().feature_dim(),
            tables: model.text_encoder().tables().clone(),
            params: model.params().clone(),
            training: training.cloned(),
            state: state.cloned(),
        }
    }

    /// Rebuilds the model from spec and tables, then restores every
    /// parameter by name.
    pub fn restore(&self) -> Result<CompatibilityModel> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model =
            CompatibilityModel::from_tables(&self.spec, self.image_mode, self.feature_dim, self.tables.clone())?;
        if model.params().len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, the encoder defines {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for saved in self.params.iter() {
            let id = model
                .params()
                .find(&saved.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", saved.name)))?;
            if model.params().get(id).shape() != saved.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    saved.name,
                    saved.tensor.shape(),
                    model.params().get(id).shape()
                )));
            }
            model.params_mut().set_values(id, saved.tensor.values())?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let body = serde_json::to_string(self)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

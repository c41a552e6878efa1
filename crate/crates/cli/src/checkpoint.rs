//! Model checkpoints: configuration, flat parameters with their layout,
//! output scale and training metadata, stored as JSON.

use std::path::Path;

use hessnet_core::model::{Model, ModelConfig, ModelParams, ParamLayout, Segment};
use hessnet_core::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub dataset_hash: Option<String>,
    pub steps: usize,
    pub final_train: Option<f64>,
    pub final_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub layout: Vec<Segment>,
    pub params: Vec<f64>,
    pub hessian_scale: f64,
    pub training: TrainingMeta,
}

impl Checkpoint {
    pub fn from_model(model: &Model, training: TrainingMeta) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: model.config().clone(),
            layout: model.params().layout().segments().to_vec(),
            params: model.params().flatten(),
            hessian_scale: model.hessian_scale,
            training,
        }
    }

    pub fn to_model(&self) -> Result<Model, Error> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!("unsupported checkpoint version {}", self.format_version)));
        }
        if ParamLayout::new(&self.config).segments() != self.layout.as_slice() {
            return Err(Error::InvalidConfig("checkpoint layout does not match its configuration".into()));
        }
        let params = ModelParams::unflatten(&self.config, self.params.clone())?;
        Model::from_params(self.config.clone(), params, self.hessian_scale)
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        crate::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Hex SHA-256 of a dataset file's bytes.
pub fn dataset_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

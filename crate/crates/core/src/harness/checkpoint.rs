use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::train::{RunReport, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{HostrConfig, HostrModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Everything needed to rebuild a trained model. Values are stored as `f64`
/// with round-trip formatting, so `f32` and `f64` parameters reload exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: HostrConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    pub params: Vec<NamedTensor>,
    #[serde(default)]
    pub rng: Option<ChaCha8Rng>,
    #[serde(default)]
    pub report: Option<RunReport>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &HostrModel<T>) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            train: None,
            params: model
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.to_f64(),
                })
                .collect(),
            rng: None,
            report: None,
            metadata: BTreeMap::new(),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<HostrModel<T>> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint format {} (expected {CHECKPOINT_VERSION})", self.format_version)));
        }
        let mut model = HostrModel::new(self.config.clone(), 0)?;
        let named = self
            .params
            .iter()
            .map(|p| Ok((p.name.clone(), Tensor::from_f64(&p.shape, &p.values)?)))
            .collect::<Result<Vec<_>>>()?;
        model.params.load(named)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

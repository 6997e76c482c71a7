use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormalizationState;
use crate::error::{Error, Result};
use crate::model::{Forecaster, ModelConfig};
use crate::tensor::Tensor;
use crate::train::{AdamState, TrainConfig};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    #[serde(flatten)]
    pub value: Tensor,
}

/// Column layout and normalization of the data a model was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub columns: Vec<String>,
    pub targets: Vec<String>,
    pub normalization: NormalizationState,
    pub train_rows: usize,
    pub test_rows: usize,
    pub pad: bool,
}

/// Full training state at an epoch boundary. Random streams are derived from
/// `seed` and `epoch`, so these fields fix the generator state too.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    pub optimizer: AdamState,
    pub loss_history: Vec<f64>,
    #[serde(default)]
    pub data: Option<DataMeta>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Input(format!("unsupported checkpoint format {}", ck.format)));
        }
        for t in ck.params.iter().map(|p| &p.value).chain(&ck.optimizer.m).chain(&ck.optimizer.v) {
            if t.data().len() != t.rows() * t.cols() {
                return Err(Error::Input(format!(
                    "checkpoint tensor declares {}x{} but holds {} values",
                    t.rows(),
                    t.cols(),
                    t.data().len()
                )));
            }
        }
        Ok(ck)
    }

    /// Writes through a temporary sibling file and a rename, so an
    /// interrupted save never leaves a truncated checkpoint behind.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("json.partial");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Rebuilds the model with the stored parameter values. Names and shapes
    /// must match the architecture the stored config describes.
    pub fn build_model(&self) -> Result<Forecaster> {
        let mut model = Forecaster::new(self.model.clone(), self.seed)?;
        let store = model.params_mut();
        if store.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} parameters, the configured model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in &self.params {
            let id = store
                .id_of(&p.name)
                .ok_or_else(|| Error::Config(format!("checkpoint parameter '{}' is not in the model", p.name)))?;
            store.set(id, p.value.clone())?;
        }
        Ok(model)
    }
}

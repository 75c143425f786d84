use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GsiConfig, GsiModel, GsiParams};
use crate::error::{Error, Result};
use crate::tfi::FeatureRouting;

pub const CHECKPOINT_FORMAT: &str = "mrfg-gsi";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: GsiConfig,
    pub routing: FeatureRouting,
    /// Path or tag of the ranking the routing was derived from.
    pub ranking_ref: Option<String>,
    pub tensors: Vec<TensorRecord>,
}

impl GsiModel {
    pub fn to_checkpoint(&self, ranking_ref: Option<String>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            routing: self.routing.clone(),
            ranking_ref,
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|(name, t)| TensorRecord {
                    name,
                    shape: [t.nrows(), t.ncols()],
                    data: t.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        ck.config.validate()?;
        let mut params = GsiParams::zeros(
            ck.routing.graph_dims.len(),
            ck.routing.mlp_dims.len(),
            ck.config.hidden_dim,
        );
        {
            let slots = params.tensors_mut();
            if slots.len() != ck.tensors.len() {
                return Err(Error::Config(format!(
                    "checkpoint has {} tensors, model needs {}",
                    ck.tensors.len(),
                    slots.len()
                )));
            }
            for ((name, slot), rec) in slots.into_iter().zip(&ck.tensors) {
                if name != rec.name || slot.dim() != (rec.shape[0], rec.shape[1]) {
                    return Err(Error::Config(format!(
                        "checkpoint tensor {} {:?} does not match {name} {:?}",
                        rec.name,
                        rec.shape,
                        slot.dim()
                    )));
                }
                *slot = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data.clone())
                    .map_err(|e| Error::Config(format!("tensor {name}: {e}")))?;
            }
        }
        if !params.all_finite() {
            return Err(Error::Config("checkpoint holds non-finite parameters".into()));
        }
        Ok(GsiModel {
            config: ck.config.clone(),
            routing: ck.routing.clone(),
            params,
        })
    }

    pub fn save(&self, path: &Path, ranking_ref: Option<String>) -> Result<()> {
        let mut s = serde_json::to_string(&self.to_checkpoint(ranking_ref))?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&s)?)
    }
}

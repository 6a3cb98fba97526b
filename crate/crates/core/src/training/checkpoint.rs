//! `model.json` (configs, layout, mesh hash, scaling, history) plus
//! `weights.f64` (raw little-endian f64 in layout order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LossRecord, TrainConfig, TrainStatus};
use crate::dataset::{ScalingParams, SplitSpec};
use crate::dataset::io::read_f64s;
use crate::diff::ParamLayout;
use crate::error::{Error, Result};
use crate::mesh::MeshGraph;
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub train: Option<TrainConfig>,
    pub layout: ParamLayout,
    pub mesh_hash: String,
    pub scaling: ScalingParams,
    pub split: Option<SplitSpec>,
    pub epoch: usize,
    pub status: TrainStatus,
    pub history: Vec<LossRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(model: &Model, params: Vec<f64>, scaling: ScalingParams) -> Result<Self> {
        Error::check_dim("parameter vector", model.num_params(), params.len())?;
        Error::check_dim("scaling", model.field_len(), scaling.len())?;
        Ok(Checkpoint {
            meta: CheckpointMeta {
                format_version: CHECKPOINT_VERSION,
                model: model.config.clone(),
                train: None,
                layout: model.layout().clone(),
                mesh_hash: model.mesh().content_hash(),
                scaling,
                split: None,
                epoch: 0,
                status: TrainStatus::Completed,
                history: Vec::new(),
            },
            params,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::format(&path, e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("weights.f64");
        let bytes: Vec<u8> = self.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Loads without checking the mesh.
    pub fn load_unchecked(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("model.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                &path,
                format!(
                    "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                    meta.format_version
                ),
            ));
        }
        meta.layout.validate()?;
        let path = dir.join("weights.f64");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let expected = 8 * meta.layout.len();
        if bytes.len() != expected {
            let message = if bytes.len() < expected {
                let block = meta
                    .layout
                    .block_at(bytes.len() / 8)
                    .map_or("?", |b| b.name.as_str());
                format!(
                    "weights end inside block {block}: expected {expected} bytes, found {}",
                    bytes.len()
                )
            } else {
                format!("expected {expected} bytes, found {}", bytes.len())
            };
            return Err(Error::format(&path, message));
        }
        Ok(Checkpoint {
            params: read_f64s(&bytes),
            meta,
        })
    }

    /// Loads and rebuilds the model on `mesh`, refusing a mismatched mesh.
    pub fn load(dir: impl AsRef<Path>, mesh: MeshGraph) -> Result<(Self, Model)> {
        let ckpt = Self::load_unchecked(dir)?;
        let model = ckpt.model(mesh)?;
        Ok((ckpt, model))
    }

    pub fn model(&self, mesh: MeshGraph) -> Result<Model> {
        let actual = mesh.content_hash();
        if actual != self.meta.mesh_hash {
            return Err(Error::MeshHash {
                expected: self.meta.mesh_hash.clone(),
                actual,
            });
        }
        let model = Model::new(self.meta.model.clone(), mesh)?;
        if model.layout() != &self.meta.layout {
            return Err(Error::Validation(
                "checkpoint layout does not match the configured architecture".into(),
            ));
        }
        Ok(model)
    }

    /// Physical-units field for a decoded scaled field.
    pub fn unscale(&self, mut field: Vec<f64>) -> Result<Vec<f64>> {
        self.meta.scaling.invert_in_place(&mut field)?;
        Ok(field)
    }
}

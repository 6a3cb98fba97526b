use serde::{Deserialize, Serialize};

use super::{SnapshotDataset, SplitSpec};
use crate::error::{Error, Result};

/// Per node-channel affine scaling `u~ = (u - alpha1) / alpha2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
}

/// Midpoints and half-ranges over the training pairs only. Nodes whose
/// training range is empty (max == min) get `alpha2 = 1`.
pub fn compute_scaling(dataset: &SnapshotDataset, split: &SplitSpec) -> Result<ScalingParams> {
    split.validate(dataset)?;
    let len = dataset.field_len();
    let mut lo = vec![f64::INFINITY; len];
    let mut hi = vec![f64::NEG_INFINITY; len];
    for &sim in &split.train_sim_ids {
        for k in 0..split.train_time_cutoff {
            for ((l, h), &v) in lo.iter_mut().zip(hi.iter_mut()).zip(dataset.snapshot(sim, k)) {
                *l = l.min(v);
                *h = h.max(v);
            }
        }
    }
    let alpha1 = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (h + l)).collect();
    let alpha2 = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| if h > l { 0.5 * (h - l) } else { 1.0 })
        .collect();
    Ok(ScalingParams { alpha1, alpha2 })
}

impl ScalingParams {
    pub fn len(&self) -> usize {
        self.alpha1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha1.is_empty()
    }

    pub fn apply(&self, field: &[f64]) -> Result<Vec<f64>> {
        Error::check_dim("scaling input", self.len(), field.len())?;
        Ok(field
            .iter()
            .zip(&self.alpha1)
            .zip(&self.alpha2)
            .map(|((u, a1), a2)| (u - a1) / a2)
            .collect())
    }

    pub fn invert(&self, scaled: &[f64]) -> Result<Vec<f64>> {
        let mut out = scaled.to_vec();
        self.invert_in_place(&mut out)?;
        Ok(out)
    }

    pub fn invert_in_place(&self, field: &mut [f64]) -> Result<()> {
        Error::check_dim("scaling input", self.len(), field.len())?;
        for ((u, a1), a2) in field.iter_mut().zip(&self.alpha1).zip(&self.alpha2) {
            *u = *u * a2 + a1;
        }
        Ok(())
    }

    /// Identity scaling (`alpha1 = 0`, `alpha2 = 1`).
    pub fn identity(len: usize) -> Self {
        ScalingParams {
            alpha1: vec![0.0; len],
            alpha2: vec![1.0; len],
        }
    }
}

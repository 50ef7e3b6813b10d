//! The mass regressor: architecture, training, model files and
//! per-recording prediction.

mod io;
mod model;
mod train;

pub use io::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use model::*;
pub use train::{best_epoch, train, EpochRecord, TrainConfig, TrainHistory, TrainSample};

use crate::data::{Candidate, MassPrediction, NormStats, Quantity};
use crate::error::{Error, Result};
use crate::nn::{OptimizerKind, Tensor};
use crate::patch::{FloatImage, PATCH_SIZE};

/// Trained network plus everything needed to interpret its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct MassModel {
    pub net: MassNet<f32>,
    pub stats: Option<NormStats>,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl MassModel {
    pub fn build(seed: u64, optimizer: OptimizerKind) -> Self {
        Self {
            net: MassNet::build(seed),
            stats: None,
            optimizer,
            seed,
        }
    }

    fn require_stats(&self) -> Result<&NormStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("model has no normalization statistics".into()))
    }

    /// Normalized mass for already normalized features.
    pub fn predict_patch(&self, patch: &FloatImage, features: [f64; 3]) -> Result<f64> {
        self.require_stats()?;
        Ok(self.predict_normalized(&[patch], &[features])?[0])
    }

    /// Eval-mode forward of a batch; features must be normalized.
    pub fn predict_normalized(&self, patches: &[&FloatImage], features: &[[f64; 3]]) -> Result<Vec<f64>> {
        let (x, f) = batch_tensors(patches, features)?;
        let out = self.net.forward_eval(&x, &f)?;
        Ok(out.data().iter().map(|&v| f64::from(v)).collect())
    }

    /// Mean of the denormalized per-candidate predictions, in grams.
    pub fn predict_recording(&self, recording_id: &str, candidates: &[Candidate]) -> Result<MassPrediction> {
        let stats = *self.require_stats()?;
        if candidates.is_empty() {
            return Ok(MassPrediction::missing(recording_id));
        }
        let patches: Vec<&FloatImage> = candidates.iter().map(|c| &c.patch).collect();
        let feats: Vec<[f64; 3]> = candidates.iter().map(|c| stats.features(c.features())).collect();
        let mut grams: Vec<f64> = self
            .predict_normalized(&patches, &feats)?
            .into_iter()
            .map(|v| crate::data::denormalize(v, Quantity::Mass, &stats))
            .collect();
        if let Some(v) = grams.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("prediction {v} for recording {recording_id}")));
        }
        // summation order fixed so the mean does not depend on candidate order
        grams.sort_by(f64::total_cmp);
        let mean = grams.iter().sum::<f64>() / grams.len() as f64;
        Ok(MassPrediction::new(recording_id, mean, candidates.len()))
    }
}

/// Stacks patches into `[n, 3, 112, 112]` and features into `[n, 3]`.
pub fn batch_tensors(patches: &[&FloatImage], features: &[[f64; 3]]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if patches.len() != features.len() {
        return Err(Error::shape("batch", &[patches.len()], &[features.len()]));
    }
    let per = 3 * PATCH_SIZE * PATCH_SIZE;
    let mut x = Vec::with_capacity(patches.len() * per);
    for p in patches {
        if p.width() != PATCH_SIZE || p.height() != PATCH_SIZE {
            return Err(Error::shape(
                "batch patch",
                &[3, PATCH_SIZE, PATCH_SIZE],
                &[3, p.height(), p.width()],
            ));
        }
        x.extend_from_slice(p.data());
    }
    let f = features.iter().flatten().map(|&v| v as f32).collect();
    Ok((
        Tensor::from_vec(&[patches.len(), 3, PATCH_SIZE, PATCH_SIZE], x)?,
        Tensor::from_vec(&[features.len(), FEATURE_DIM], f)?,
    ))
}

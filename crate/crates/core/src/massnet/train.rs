use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{batch_tensors, MassModel};
use crate::data::{normalize, NormStats, Quantity};
use crate::error::{Error, Result};
use crate::nn::{mse_loss, Optimizer, OptimizerConfig, Tensor};
use crate::patch::{augmented_copy, sample_seed, AugmentConfig, FloatImage};

/// One training patch with raw (unnormalized) features and target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub patch: FloatImage,
    /// `[a, b, d]`
    pub features: [f64; 3],
    /// Grams.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Augmented copies generated per training patch, on top of the original.
    pub copies: usize,
    pub optimizer: OptimizerConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn cross_validation(seed: u64) -> Self {
        Self {
            batch_size: 32,
            epochs: 100,
            copies: 3,
            optimizer: OptimizerConfig::default(),
            augment: AugmentConfig {
                seed,
                ..AugmentConfig::default()
            },
            seed,
        }
    }

    pub fn final_model(seed: u64) -> Self {
        Self {
            epochs: 300,
            copies: 4,
            ..Self::cross_validation(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidInput("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidInput(format!(
                "batch size {} too small for batch norm",
                self.batch_size
            )));
        }
        self.augment.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for e in &self.epochs {
            s += &format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.lr);
        }
        s
    }
}

/// Index of the first minimum.
pub fn best_epoch(val_losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in val_losses.iter().enumerate() {
        if v < val_losses[best] {
            best = i;
        }
    }
    best
}

/// Splits `0..len` into batches of `size`, folding a trailing batch of one
/// into its predecessor (batch norm needs two samples in training mode).
fn batch_ranges(len: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<_> = (0..len).step_by(size).map(|s| s..(s + size).min(len)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sample_seed(seed, u64::MAX, epoch as u64))
}

struct Prepared<'a> {
    samples: &'a [TrainSample],
    features: Vec<[f64; 3]>,
    targets: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(samples: &'a [TrainSample], stats: &NormStats) -> Self {
        Self {
            samples,
            features: samples.iter().map(|s| stats.features(s.features)).collect(),
            targets: samples
                .iter()
                .map(|s| normalize(s.mass, Quantity::Mass, stats))
                .collect(),
        }
    }

    /// `item` enumerates originals and copies: sample `item / (copies + 1)`,
    /// copy `item % (copies + 1)`, where copy 0 is the original patch.
    fn batch(
        &self,
        items: &[usize],
        copies: usize,
        augment: &AugmentConfig,
    ) -> Result<(Tensor<f32>, Tensor<f32>, Tensor<f32>)> {
        let per = copies + 1;
        let augmented: Vec<Option<FloatImage>> = items
            .par_iter()
            .map(|&it| {
                let (s, c) = (it / per, it % per);
                (c > 0).then(|| augmented_copy(&self.samples[s].patch, augment, s as u64, c as u64))
            })
            .collect();
        let patches: Vec<&FloatImage> = items
            .iter()
            .zip(&augmented)
            .map(|(&it, aug)| aug.as_ref().unwrap_or(&self.samples[it / per].patch))
            .collect();
        let feats: Vec<[f64; 3]> = items.iter().map(|&it| self.features[it / per]).collect();
        let (x, f) = batch_tensors(&patches, &feats)?;
        let t = items.iter().map(|&it| self.targets[it / per] as f32).collect();
        Ok((x, f, Tensor::from_vec(&[items.len(), 1], t)?))
    }
}

fn validation_loss(model: &MassModel, val: &Prepared<'_>, batch_size: usize) -> Result<f64> {
    let idx: Vec<usize> = (0..val.samples.len()).collect();
    let mut total = 0.0;
    let mut batches = 0usize;
    for chunk in idx.chunks(batch_size) {
        let (x, f, t) = val.batch(chunk, 0, &AugmentConfig::identity())?;
        let out = model.net.forward_eval(&x, &f)?;
        total += f64::from(mse_loss(&out, &t)?.0);
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Trains a fresh network (initialized from `config.seed`) and returns it
/// at the epoch with the lowest mean validation loss. With an empty
/// validation set the training loss is used for that choice.
pub fn train(
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    config: &TrainConfig,
) -> Result<(MassModel, TrainHistory)> {
    config.validate()?;
    let stats = NormStats::from_samples(
        train_set
            .iter()
            .map(|s| [s.features[0], s.features[1], s.features[2], s.mass]),
    )
    .ok_or_else(|| Error::InvalidInput("empty training set".into()))?;
    let total = train_set.len() * (config.copies + 1);
    if total < 2 {
        return Err(Error::InvalidInput("training needs at least two samples".into()));
    }

    let mut model = MassModel::build(config.seed, config.optimizer.kind);
    model.stats = Some(stats);
    let train_data = Prepared::new(train_set, &stats);
    let val_data = Prepared::new(val_set, &stats);
    let mut opt = Optimizer::new(config.optimizer);
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, MassModel)> = None;

    for epoch in 0..config.epochs {
        let lr = opt.lr();
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut epoch_rng(config.seed, epoch));
        let mut loss_sum = 0.0;
        let ranges = batch_ranges(total, config.batch_size);
        for (bi, r) in ranges.iter().enumerate() {
            let (x, f, t) = train_data.batch(&order[r.clone()], config.copies, &config.augment)?;
            let (out, cache) = model.net.forward_train(&x, &f)?;
            let (loss, grad) = mse_loss(&out, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch} batch {bi}")));
            }
            let grads = model.net.backward(&cache, &grad, false)?;
            opt.step(model.net.param_slots(), &grads.params).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("{m} (epoch {epoch} batch {bi})")),
                other => other,
            })?;
            model.net.update_running_stats(&cache);
            loss_sum += f64::from(loss);
        }
        let train_loss = loss_sum / ranges.len() as f64;
        let val_loss = if val_set.is_empty() {
            train_loss
        } else {
            validation_loss(&model, &val_data, config.batch_size)?
        };
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.3e}");
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, model.clone()));
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
    }
    let vals: Vec<f64> = epochs.iter().map(|e| e.val_loss).collect();
    let history = TrainHistory {
        best_epoch: best_epoch(&vals),
        epochs,
    };
    Ok((best.expect("at least one epoch").1, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::PATCH_SIZE;

    #[test]
    fn first_minimum_wins() {
        assert_eq!(best_epoch(&[0.5, 0.2, 0.2, 0.3]), 1);
        assert_eq!(best_epoch(&[0.1]), 0);
        assert_eq!(best_epoch(&[0.3, 0.3]), 0);
    }

    #[test]
    fn trailing_singleton_batch_is_merged() {
        assert_eq!(batch_ranges(65, 32), vec![0..32, 32..65]);
        assert_eq!(batch_ranges(64, 32), vec![0..32, 32..64]);
        assert_eq!(batch_ranges(66, 32), vec![0..32, 32..64, 64..66]);
        assert_eq!(batch_ranges(5, 32), vec![0..5]);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let cfg = TrainConfig::cross_validation(0);
        assert!(train(&[], &[], &cfg).is_err());
    }

    #[test]
    fn zero_epochs_is_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::cross_validation(0)
        };
        assert!(cfg.validate().is_err());
    }

    pub(crate) fn tiny_set(n: usize, seed: u64) -> Vec<TrainSample> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let rgb = [rng.gen(), rng.gen(), rng.gen()];
                TrainSample {
                    patch: FloatImage::filled(PATCH_SIZE, PATCH_SIZE, rgb),
                    features: [rng.gen_range(0.1..0.5), rng.gen_range(0.1..0.5), rng.gen_range(0.5..2.0)],
                    mass: rng.gen_range(20.0..400.0),
                }
            })
            .collect()
    }

    #[test]
    fn same_seed_same_history() {
        let data = tiny_set(6, 1);
        let cfg = TrainConfig {
            batch_size: 4,
            epochs: 2,
            copies: 1,
            ..TrainConfig::cross_validation(9)
        };
        let (m1, h1) = train(&data[..4], &data[4..], &cfg).unwrap();
        let (m2, h2) = train(&data[..4], &data[4..], &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
        assert_eq!(h1.epochs.len(), 2);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use masscast::gradcheck::{check_model, MODEL_TOLERANCE};
use masscast::massnet::{train, TrainConfig, TrainSample};
use masscast::nn::{OptimizerConfig, OptimizerKind};
use masscast::patch::{FloatImage, PATCH_SIZE};

fn noise_samples(n: usize, seed: u64, mass: impl Fn(&mut ChaCha8Rng) -> f64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..3 * PATCH_SIZE * PATCH_SIZE).map(|_| rng.gen::<f32>()).collect();
            TrainSample {
                patch: FloatImage::from_chw(PATCH_SIZE, PATCH_SIZE, data),
                features: [rng.gen_range(0.02..0.3), rng.gen_range(0.05..0.4), rng.gen_range(0.4..1.6)],
                mass: mass(&mut rng),
            }
        })
        .collect()
}

/// Flat random colors with a horizontal ramp; unlike pure noise these keep
/// distinct activations after pooling, so batch statistics stay well
/// conditioned.
fn color_samples(n: usize, seed: u64, mass: f64) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rgb: [f32; 3] = rng.gen();
            let ramp: f32 = rng.gen_range(-0.3..0.3);
            let mut patch = FloatImage::filled(PATCH_SIZE, PATCH_SIZE, rgb);
            for c in 0..3 {
                for (i, v) in patch.channel_mut(c).iter_mut().enumerate() {
                    let x = (i % PATCH_SIZE) as f32 / PATCH_SIZE as f32;
                    *v = (*v + ramp * (x - 0.5)).clamp(0.0, 1.0);
                }
            }
            TrainSample {
                patch,
                features: [rng.gen_range(0.02..0.3), rng.gen_range(0.05..0.4), rng.gen_range(0.4..1.6)],
                mass,
            }
        })
        .collect()
}

fn config(epochs: usize, kind: OptimizerKind, base_lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        copies: 0,
        optimizer: OptimizerConfig {
            kind,
            base_lr,
            ..OptimizerConfig::default()
        },
        ..TrainConfig::cross_validation(4)
    }
}

#[test]
fn constant_target_is_fit_within_fifty_epochs() {
    let train_set = color_samples(64, 1, 120.0);
    let val_set = color_samples(16, 2, 120.0);
    // 50 epochs of 64 samples at batch 32 are only 100 steps; batch 4
    // gives 800.
    let cfg = TrainConfig {
        batch_size: 4,
        ..config(50, OptimizerKind::Adam, 0.005)
    };
    let (model, history) = train(&train_set, &val_set, &cfg).unwrap();
    let best = history.epochs[history.best_epoch].val_loss;
    assert!(best < 1e-3, "best val loss {best}\n{}", history.to_csv());
    let p = model.predict_patch(&val_set[0].patch, model.stats.as_ref().unwrap().features(val_set[0].features)).unwrap();
    // constant mass normalizes to 0
    assert!(p.abs() < 0.1, "normalized prediction {p}");
}

#[test]
fn memorizes_small_set() {
    let set = noise_samples(32, 3, |rng| rng.gen_range(20.0..400.0));
    let (_, history) = train(&set, &[], &config(201, OptimizerKind::Adam, 0.0015)).unwrap();
    let first = history.epochs[0].train_loss;
    let last = history.epochs[200].train_loss;
    assert!(first / last >= 100.0, "loss {first} -> {last}");
}

#[test]
fn full_model_gradient() {
    let report = check_model(3, 2).unwrap();
    assert!(report.passed(), "{report:?}");
    assert!(report.max_rel_error < MODEL_TOLERANCE);
}

//! Central finite-difference checks of every kernel's backward pass and of
//! the composed regressor, run in 64-bit precision.
//!
//! The numeric side only ever calls forward passes; the analytic side is the
//! kernel's own backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::massnet::{MassNet, FEATURE_DIM};
use crate::nn::{
    concat, concat_backward, maxpool2, maxpool2_backward, mse_loss, relu, relu_backward,
    BatchNorm, Conv2d, Linear, Tensor,
};
use crate::patch::PATCH_SIZE;

pub const FD_STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-6;
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Inputs this close to a ReLU kink or a max-pool tie are not checked.
pub const KINK_MARGIN: f64 = 1e-3;
/// Denominator floor so that exactly-zero gradients compare on an absolute
/// scale.
pub const REL_FLOOR: f64 = 1e-6;
/// Denominator floor for the end-to-end check. Batch-norm reductions over
/// whole feature maps leave about 1e-9 of round-off in the difference
/// quotient, e.g. for conv biases whose exact gradient is zero.
pub const MODEL_REL_FLOOR: f64 = 1e-5;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub seeds: usize,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            seeds: 0,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        self.max_rel_error = self.max_rel_error.max(relative_error(analytic, numeric));
    }

    /// Like `record`, with the denominator floored at `floor` instead of
    /// `REL_FLOOR`; `None` counts as skipped.
    fn record_or_skip(&mut self, analytic: f64, numeric: Option<f64>, floor: f64) {
        match numeric {
            Some(n) => {
                self.checked += 1;
                let err = (analytic - n).abs() / analytic.abs().max(n.abs()).max(floor);
                self.max_rel_error = self.max_rel_error.max(err);
            }
            None => self.skipped += 1,
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error < self.tolerance
    }
}

/// Central difference of `f` with respect to `values[i]`.
fn central(values: &mut [f64], i: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + FD_STEP;
    let plus = f(values);
    values[i] = orig - FD_STEP;
    let minus = f(values);
    values[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, random_vec(rng, n, 1.0)).expect("shape")
}

/// Scalar projection `sum(r * y)` so that `dL/dy = r`.
fn project(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn with_shape(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(t.shape(), data.to_vec()).expect("shape")
}

pub fn check_conv2d(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("conv2d", LAYER_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
        let (n, cin, h, w) = if seed == 0 { (2, 3, 5, 5) } else { (n, cin, h, w) };
        let mut conv = Conv2d::<f64>::zeros(cin, cout);
        conv.weight = random_vec(&mut rng, conv.weight.len(), 1.0);
        conv.bias = random_vec(&mut rng, cout, 1.0);
        let x = random_tensor(&mut rng, &[n, cin, h, w]);
        let r = random_vec(&mut rng, n * cout * h * w, 1.0);
        let gy = Tensor::from_vec(&[n, cout, h, w], r.clone())?;
        let (gx, grads) = conv.backward(&x, &gy)?;

        let mut xs = x.data().to_vec();
        for i in 0..xs.len() {
            let num = central(&mut xs, i, |v| project(&conv.forward(&with_shape(&x, v)).unwrap(), &r));
            report.record(gx.data()[i], num);
        }
        let mut probe = conv.clone();
        for i in 0..conv.weight.len() {
            let mut ws = conv.weight.clone();
            let num = central(&mut ws, i, |v| {
                probe.weight.copy_from_slice(v);
                project(&probe.forward(&x).unwrap(), &r)
            });
            report.record(grads.weight[i], num);
        }
        probe.weight.copy_from_slice(&conv.weight);
        for i in 0..cout {
            let mut bs = conv.bias.clone();
            let num = central(&mut bs, i, |v| {
                probe.bias.copy_from_slice(v);
                project(&probe.forward(&x).unwrap(), &r)
            });
            report.record(grads.bias[i], num);
        }
        report.seeds += 1;
    }
    Ok(report)
}

pub fn check_maxpool2(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("maxpool2", LAYER_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let shape = [
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
            2 * rng.gen_range(1..=4),
            2 * rng.gen_range(1..=4),
        ];
        let x = random_tensor(&mut rng, &shape);
        let pooled = maxpool2(&x)?;
        let r = random_vec(&mut rng, pooled.output.len(), 1.0);
        let gy = with_shape(&pooled.output, &r);
        let gx = maxpool2_backward(x.shape(), &pooled.argmax, &gy)?;

        // Windows whose two largest values are within the margin are ties.
        let (h, w) = (shape[2], shape[3]);
        let mut near_tie = vec![false; x.len()];
        for plane in 0..shape[0] * shape[1] {
            for oy in 0..h / 2 {
                for ox in 0..w / 2 {
                    let base = plane * h * w + 2 * oy * w + 2 * ox;
                    let idx = [base, base + 1, base + w, base + w + 1];
                    let top = idx.iter().map(|&i| x.data()[i]).fold(f64::MIN, f64::max);
                    let close = idx.iter().filter(|&&i| top - x.data()[i] < KINK_MARGIN).count();
                    if close > 1 {
                        idx.iter().for_each(|&i| near_tie[i] = true);
                    }
                }
            }
        }
        let mut xs = x.data().to_vec();
        for i in 0..xs.len() {
            if near_tie[i] {
                report.skipped += 1;
                continue;
            }
            let num = central(&mut xs, i, |v| {
                project(&maxpool2(&with_shape(&x, v)).unwrap().output, &r)
            });
            report.record(gx.data()[i], num);
        }
        report.seeds += 1;
    }
    Ok(report)
}

pub fn check_batchnorm(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("batchnorm", LAYER_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let n = rng.gen_range(2..=4);
        let c = rng.gen_range(1..=3);
        let shape = if seed % 2 == 0 {
            vec![n, c]
        } else {
            vec![n, c, rng.gen_range(1..=3), rng.gen_range(1..=3)]
        };
        let mut bn = BatchNorm::<f64>::new(c);
        bn.gamma = random_vec(&mut rng, c, 2.0);
        bn.beta = random_vec(&mut rng, c, 1.0);
        let x = random_tensor(&mut rng, &shape);
        let r = random_vec(&mut rng, x.len(), 1.0);
        let (y, cache) = bn.forward_train(&x)?;
        let (gx, grads) = bn.backward(&cache, &with_shape(&y, &r))?;

        let mut xs = x.data().to_vec();
        for i in 0..xs.len() {
            let num = central(&mut xs, i, |v| {
                project(&bn.forward_train(&with_shape(&x, v)).unwrap().0, &r)
            });
            report.record(gx.data()[i], num);
        }
        let mut probe = bn.clone();
        for i in 0..c {
            let mut gs = bn.gamma.clone();
            let num = central(&mut gs, i, |v| {
                probe.gamma.copy_from_slice(v);
                project(&probe.forward_train(&x).unwrap().0, &r)
            });
            report.record(grads.gamma[i], num);
            probe.gamma.copy_from_slice(&bn.gamma);
            let mut bs = bn.beta.clone();
            let num = central(&mut bs, i, |v| {
                probe.beta.copy_from_slice(v);
                project(&probe.forward_train(&x).unwrap().0, &r)
            });
            report.record(grads.beta[i], num);
            probe.beta.copy_from_slice(&bn.beta);
        }
        report.seeds += 1;
    }
    Ok(report)
}

pub fn check_fully_connected(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("fully_connected", LAYER_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let (n, fin, fout) = (rng.gen_range(1..=4), rng.gen_range(1..=7), rng.gen_range(1..=5));
        let mut fc = Linear::<f64>::zeros(fin, fout);
        fc.weight = random_vec(&mut rng, fin * fout, 1.0);
        fc.bias = random_vec(&mut rng, fout, 1.0);
        let x = random_tensor(&mut rng, &[n, fin]);
        let r = random_vec(&mut rng, n * fout, 1.0);
        let (gx, grads) = fc.backward(&x, &Tensor::from_vec(&[n, fout], r.clone())?)?;

        let mut xs = x.data().to_vec();
        for i in 0..xs.len() {
            let num = central(&mut xs, i, |v| project(&fc.forward(&with_shape(&x, v)).unwrap(), &r));
            report.record(gx.data()[i], num);
        }
        let mut probe = fc.clone();
        for i in 0..fc.weight.len() {
            let mut ws = fc.weight.clone();
            let num = central(&mut ws, i, |v| {
                probe.weight.copy_from_slice(v);
                project(&probe.forward(&x).unwrap(), &r)
            });
            report.record(grads.weight[i], num);
        }
        probe.weight.copy_from_slice(&fc.weight);
        for i in 0..fout {
            let mut bs = fc.bias.clone();
            let num = central(&mut bs, i, |v| {
                probe.bias.copy_from_slice(v);
                project(&probe.forward(&x).unwrap(), &r)
            });
            report.record(grads.bias[i], num);
        }
        report.seeds += 1;
    }
    Ok(report)
}

pub fn check_relu(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("relu", LAYER_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let shape = [rng.gen_range(1..=4), rng.gen_range(1..=8)];
        let x = random_tensor(&mut rng, &shape);
        let r = random_vec(&mut rng, x.len(), 1.0);
        let y = relu(&x);
        let gx = relu_backward(&y, &with_shape(&y, &r))?;
        let mut xs = x.data().to_vec();
        for i in 0..xs.len() {
            if xs[i].abs() < KINK_MARGIN {
                report.skipped += 1;
                continue;
            }
            let num = central(&mut xs, i, |v| project(&relu(&with_shape(&x, v)), &r));
            report.record(gx.data()[i], num);
        }
        report.seeds += 1;
    }
    Ok(report)
}

pub fn check_concat(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("concat", LAYER_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + seed);
        let n = rng.gen_range(1..=4);
        let a = random_tensor(&mut rng, &[n, 6]);
        let b = random_tensor(&mut rng, &[n, FEATURE_DIM]);
        let r = random_vec(&mut rng, n * (6 + FEATURE_DIM), 1.0);
        let (ga, gb) = concat_backward(&Tensor::from_vec(&[n, 6 + FEATURE_DIM], r.clone())?, 6)?;
        let mut av = a.data().to_vec();
        for i in 0..av.len() {
            let num = central(&mut av, i, |v| project(&concat(&with_shape(&a, v), &b).unwrap(), &r));
            report.record(ga.data()[i], num);
        }
        let mut bv = b.data().to_vec();
        for i in 0..bv.len() {
            let num = central(&mut bv, i, |v| project(&concat(&a, &with_shape(&b, v)).unwrap(), &r));
            report.record(gb.data()[i], num);
        }
        report.seeds += 1;
    }
    Ok(report)
}

pub fn check_mse(seeds: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("mse_loss", LOSS_TOLERANCE);
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + seed);
        let shape = [rng.gen_range(1..=8), 1];
        let p = random_tensor(&mut rng, &shape);
        let t = random_tensor(&mut rng, &shape);
        let (_, g) = mse_loss(&p, &t)?;
        let mut ps = p.data().to_vec();
        for i in 0..ps.len() {
            let num = central(&mut ps, i, |v| mse_loss(&with_shape(&p, v), &t).unwrap().0);
            report.record(g.data()[i], num);
        }
        report.seeds += 1;
    }
    Ok(report)
}

/// Training-mode forward from conv block `first_block` that also records
/// which branch every ReLU and max-pool took.
fn forward_with_pattern(
    net: &MassNet<f64>,
    first_block: usize,
    activation: &Tensor<f64>,
    features: &Tensor<f64>,
) -> Result<(Tensor<f64>, Vec<u32>)> {
    let mut pattern = Vec::new();
    let rectify = |y: Tensor<f64>, pattern: &mut Vec<u32>| {
        pattern.extend(y.data().iter().map(|&v| u32::from(v > 0.0)));
        relu(&y)
    };
    let mut h = activation.clone();
    for b in &net.blocks[first_block.min(net.blocks.len())..] {
        let y = b.bn.forward_train(&b.conv.forward(&h)?)?.0;
        let pooled = maxpool2(&rectify(y, &mut pattern))?;
        pattern.extend_from_slice(&pooled.argmax);
        h = pooled.output;
    }
    let n = h.batch();
    let h = h.reshape(&[n, crate::massnet::FLATTEN_DIM])?;
    let h = rectify(net.bn1.forward_train(&net.fc1.forward(&h)?)?.0, &mut pattern);
    let h = rectify(net.bn2.forward_train(&net.fc2.forward(&h)?)?.0, &mut pattern);
    Ok((net.head.forward(&concat(&h, features)?)?, pattern))
}

/// Central difference that gives up (`None`) when the two evaluations take
/// different ReLU or max-pool branches, i.e. the step straddles a kink.
fn central_smooth(
    values: &mut [f64],
    i: usize,
    mut f: impl FnMut(&[f64]) -> (f64, Vec<u32>),
) -> Option<f64> {
    let orig = values[i];
    values[i] = orig + FD_STEP;
    let (plus, p_plus) = f(values);
    values[i] = orig - FD_STEP;
    let (minus, p_minus) = f(values);
    values[i] = orig;
    (p_plus == p_minus).then(|| (plus - minus) / (2.0 * FD_STEP))
}

/// End-to-end check of the full regressor on a 2-sample batch in training
/// mode: `coords_per_tensor` random coordinates of every parameter tensor,
/// a few input pixels and every side-channel feature. Coordinates whose
/// finite-difference step crosses a ReLU or max-pool kink somewhere in the
/// network are counted as skipped.
pub fn check_model(seeds: u64, coords_per_tensor: usize) -> Result<CheckReport> {
    let mut report = CheckReport::new("massnet end-to-end", MODEL_TOLERANCE);
    const BATCH: usize = 2;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
        let mut net = MassNet::<f64>::build(seed);
        for bn in net.batchnorms_mut() {
            bn.gamma = (0..bn.channels).map(|_| rng.gen_range(0.5..1.5)).collect();
            bn.beta = random_vec(&mut rng, bn.channels, 0.3);
        }
        let x_shape = [BATCH, 3, PATCH_SIZE, PATCH_SIZE];
        let x = Tensor::from_vec(
            &x_shape,
            (0..x_shape.iter().product()).map(|_| rng.gen::<f64>()).collect(),
        )?;
        let f = Tensor::from_vec(&[BATCH, FEATURE_DIM], random_vec(&mut rng, BATCH * FEATURE_DIM, 1.0))?;
        let target = Tensor::from_vec(&[BATCH, 1], random_vec(&mut rng, BATCH, 1.0))?;

        let (out, cache) = net.forward_train(&x, &f)?;
        let (_, g_out) = mse_loss(&out, &target)?;
        let grads = net.backward(&cache, &g_out, true)?;
        let floor = MODEL_REL_FLOOR;
        let acts = net.block_activations(&x)?;

        // Parameter tensors 4i..4i+3 belong to conv block i; the rest are
        // the fully connected layers.
        let n_tensors = grads.params.len();
        for t in 0..n_tensors {
            let start = (t / 4).min(4);
            let len = grads.params[t].len();
            let picks: Vec<usize> = if len <= coords_per_tensor {
                (0..len).collect()
            } else {
                (0..coords_per_tensor).map(|_| rng.gen_range(0..len)).collect()
            };
            for i in picks {
                let mut probe = net.clone();
                let mut values = probe.param_slots()[t].values.to_vec();
                let num = central_smooth(&mut values, i, |v| {
                    probe.param_slots()[t].values.copy_from_slice(v);
                    let (y, pattern) = forward_with_pattern(&probe, start, &acts[start], &f).unwrap();
                    (mse_loss(&y, &target).unwrap().0, pattern)
                });
                report.record_or_skip(grads.params[t][i], num, floor);
            }
        }
        let gx = grads.input.expect("input gradient requested");
        let mut xs = x.data().to_vec();
        for _ in 0..coords_per_tensor {
            let i = rng.gen_range(0..xs.len());
            let num = central_smooth(&mut xs, i, |v| {
                let (y, pattern) = forward_with_pattern(&net, 0, &with_shape(&x, v), &f).unwrap();
                (mse_loss(&y, &target).unwrap().0, pattern)
            });
            report.record_or_skip(gx.data()[i], num, floor);
        }
        let mut fs = f.data().to_vec();
        for i in 0..fs.len() {
            let num = central_smooth(&mut fs, i, |v| {
                let (y, pattern) = forward_with_pattern(&net, 4, &acts[4], &with_shape(&f, v)).unwrap();
                (mse_loss(&y, &target).unwrap().0, pattern)
            });
            report.record_or_skip(grads.features.data()[i], num, floor);
        }
        report.seeds += 1;
    }
    Ok(report)
}

/// Every layer check with `seeds` random instances each, plus the
/// end-to-end model check.
pub fn run_suite(seeds: u64, model_seeds: u64, coords_per_tensor: usize) -> Result<Vec<CheckReport>> {
    Ok(vec![
        check_conv2d(seeds)?,
        check_maxpool2(seeds)?,
        check_batchnorm(seeds)?,
        check_fully_connected(seeds)?,
        check_relu(seeds)?,
        check_concat(seeds)?,
        check_mse(seeds)?,
        check_model(model_seeds, coords_per_tensor)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(0.0, 1e-12) < 1e-5);
    }

    #[test]
    fn central_difference_of_quadratic() {
        let mut v = vec![3.0, -1.0];
        let d = central(&mut v, 0, |x| x[0] * x[0] + x[1]);
        assert!((d - 6.0).abs() < 1e-8);
        assert_eq!(v, vec![3.0, -1.0]);
    }

    #[test]
    fn layer_checks_pass() {
        for report in [
            check_conv2d(3).unwrap(),
            check_maxpool2(3).unwrap(),
            check_batchnorm(3).unwrap(),
            check_fully_connected(3).unwrap(),
            check_relu(3).unwrap(),
            check_concat(3).unwrap(),
            check_mse(3).unwrap(),
        ] {
            assert!(report.passed(), "{report:?}");
        }
    }
}

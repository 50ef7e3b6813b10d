use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    concat, concat_backward, maxpool2, maxpool2_backward, relu, relu_backward, BatchNorm,
    BnCache, Conv2d, Linear, ParamSlot, Real, Tensor,
};
use crate::patch::PATCH_SIZE;

pub const INPUT_CHANNELS: usize = 3;
pub const CONV_CHANNELS: [usize; 4] = [32, 64, 64, 128];
pub const FC1_OUT: usize = 64;
pub const FC2_OUT: usize = 6;
/// Side-channel features `[a, b, d]`.
pub const FEATURE_DIM: usize = 3;
/// Spatial size after the four 2x2 pools: 112 -> 56 -> 28 -> 14 -> 7.
pub const FINAL_SPATIAL: usize = PATCH_SIZE >> CONV_CHANNELS.len();
pub const FLATTEN_DIM: usize = CONV_CHANNELS[3] * FINAL_SPATIAL * FINAL_SPATIAL;

const _: () = assert!(FLATTEN_DIM == 6272);

/// Learnable parameters per layer, derived from the layer shapes alone.
pub fn layer_param_counts() -> Vec<(&'static str, usize)> {
    let conv = |cin: usize, cout: usize| cin * cout * 9 + cout;
    let fc = |fin: usize, fout: usize| fin * fout + fout;
    let bn = |c: usize| 2 * c;
    let c = CONV_CHANNELS;
    vec![
        ("conv1", conv(INPUT_CHANNELS, c[0]) + bn(c[0])),
        ("conv2", conv(c[0], c[1]) + bn(c[1])),
        ("conv3", conv(c[1], c[2]) + bn(c[2])),
        ("conv4", conv(c[2], c[3]) + bn(c[3])),
        ("fc1", fc(FLATTEN_DIM, FC1_OUT) + bn(FC1_OUT)),
        ("fc2", fc(FC1_OUT, FC2_OUT) + bn(FC2_OUT)),
        ("head", fc(FC2_OUT + FEATURE_DIM, 1)),
    ]
}

pub fn expected_param_count() -> usize {
    layer_param_counts().iter().map(|(_, n)| n).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
}

/// Patch regressor: four conv->BN->ReLU->maxpool blocks, FC(6272->64)+BN+ReLU,
/// FC(64->6)+BN+ReLU, concatenation with `[a, b, d]`, and a linear
/// FC(9->1) head.
#[derive(Debug, Clone, PartialEq)]
pub struct MassNet<T> {
    pub blocks: Vec<ConvBlock<T>>,
    pub fc1: Linear<T>,
    pub bn1: BatchNorm<T>,
    pub fc2: Linear<T>,
    pub bn2: BatchNorm<T>,
    pub head: Linear<T>,
}

struct BlockCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    act: Tensor<T>,
    argmax: Vec<u32>,
}

/// Intermediate values of a training-mode forward pass.
pub struct TrainCache<T> {
    blocks: Vec<BlockCache<T>>,
    flat: Tensor<T>,
    bn1: BnCache<T>,
    act1: Tensor<T>,
    bn2: BnCache<T>,
    act2: Tensor<T>,
    joined: Tensor<T>,
}

pub struct ModelGrads<T> {
    /// Parameter gradients in [`MassNet::param_slots`] order.
    pub params: Vec<Vec<T>>,
    pub input: Option<Tensor<T>>,
    pub features: Tensor<T>,
}

impl<T: Real> MassNet<T> {
    pub fn zeros() -> Self {
        let mut cin = INPUT_CHANNELS;
        let blocks = CONV_CHANNELS
            .iter()
            .map(|&cout| {
                let b = ConvBlock {
                    conv: Conv2d::zeros(cin, cout),
                    bn: BatchNorm::new(cout),
                };
                cin = cout;
                b
            })
            .collect();
        Self {
            blocks,
            fc1: Linear::zeros(FLATTEN_DIM, FC1_OUT),
            bn1: BatchNorm::new(FC1_OUT),
            fc2: Linear::zeros(FC1_OUT, FC2_OUT),
            bn2: BatchNorm::new(FC2_OUT),
            head: Linear::zeros(FC2_OUT + FEATURE_DIM, 1),
        }
    }

    /// Fan-in scaled uniform (He) weights, zero biases, unit BN scale.
    pub fn build(seed: u64) -> Self {
        let mut net = Self::zeros();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |w: &mut [T], fan_in: usize| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in w {
                *v = T::lit(rng.gen_range(-bound..bound));
            }
        };
        for b in &mut net.blocks {
            fill(&mut b.conv.weight, b.conv.in_channels * 9);
        }
        fill(&mut net.fc1.weight, FLATTEN_DIM);
        fill(&mut net.fc2.weight, FC1_OUT);
        fill(&mut net.head.weight, FC2_OUT + FEATURE_DIM);
        let count = net.param_count();
        assert_eq!(count, expected_param_count(), "architecture drifted from its table");
        net
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| b.conv.param_count() + b.bn.param_count())
            .sum::<usize>()
            + self.fc1.param_count()
            + self.bn1.param_count()
            + self.fc2.param_count()
            + self.bn2.param_count()
            + self.head.param_count()
    }

    /// Learnable tensors in canonical order (also the serialization order).
    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        fn slot<T>(name: String, values: &mut [T], decay: bool) -> ParamSlot<'_, T> {
            ParamSlot { name, values, decay }
        }
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push(slot(format!("conv{}.weight", i + 1), &mut b.conv.weight, true));
            out.push(slot(format!("conv{}.bias", i + 1), &mut b.conv.bias, false));
            out.push(slot(format!("bn{}.gamma", i + 1), &mut b.bn.gamma, false));
            out.push(slot(format!("bn{}.beta", i + 1), &mut b.bn.beta, false));
        }
        out.push(slot("fc1.weight".into(), &mut self.fc1.weight, true));
        out.push(slot("fc1.bias".into(), &mut self.fc1.bias, false));
        out.push(slot("fc1_bn.gamma".into(), &mut self.bn1.gamma, false));
        out.push(slot("fc1_bn.beta".into(), &mut self.bn1.beta, false));
        out.push(slot("fc2.weight".into(), &mut self.fc2.weight, true));
        out.push(slot("fc2.bias".into(), &mut self.fc2.bias, false));
        out.push(slot("fc2_bn.gamma".into(), &mut self.bn2.gamma, false));
        out.push(slot("fc2_bn.beta".into(), &mut self.bn2.beta, false));
        out.push(slot("head.weight".into(), &mut self.head.weight, true));
        out.push(slot("head.bias".into(), &mut self.head.bias, false));
        out
    }

    /// Batch-norm layers in canonical order.
    pub fn batchnorms(&self) -> Vec<&BatchNorm<T>> {
        let mut v: Vec<_> = self.blocks.iter().map(|b| &b.bn).collect();
        v.push(&self.bn1);
        v.push(&self.bn2);
        v
    }

    pub fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut v: Vec<_> = self.blocks.iter_mut().map(|b| &mut b.bn).collect();
        v.push(&mut self.bn1);
        v.push(&mut self.bn2);
        v
    }

    pub fn cast<U: Real>(&self) -> MassNet<U> {
        let vc = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        let bn = |b: &BatchNorm<T>| BatchNorm {
            channels: b.channels,
            gamma: vc(&b.gamma),
            beta: vc(&b.beta),
            running_mean: vc(&b.running_mean),
            running_var: vc(&b.running_var),
            momentum: U::lit(b.momentum.as_f64()),
            eps: U::lit(b.eps.as_f64()),
        };
        let lin = |l: &Linear<T>| Linear {
            in_features: l.in_features,
            out_features: l.out_features,
            weight: vc(&l.weight),
            bias: vc(&l.bias),
        };
        MassNet {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    conv: Conv2d {
                        in_channels: b.conv.in_channels,
                        out_channels: b.conv.out_channels,
                        weight: vc(&b.conv.weight),
                        bias: vc(&b.conv.bias),
                    },
                    bn: bn(&b.bn),
                })
                .collect(),
            fc1: lin(&self.fc1),
            bn1: bn(&self.bn1),
            fc2: lin(&self.fc2),
            bn2: bn(&self.bn2),
            head: lin(&self.head),
        }
    }

    fn check_inputs(&self, x: &Tensor<T>, features: &Tensor<T>) -> Result<usize> {
        let n = x.batch();
        let want = [n, INPUT_CHANNELS, PATCH_SIZE, PATCH_SIZE];
        if x.shape() != want {
            return Err(Error::shape("massnet input", &want, x.shape()));
        }
        if features.shape() != [n, FEATURE_DIM] {
            return Err(Error::shape("massnet features", &[n, FEATURE_DIM], features.shape()));
        }
        Ok(n)
    }

    /// Inference with running batch-norm statistics; rows are independent.
    pub fn forward_eval(&self, x: &Tensor<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_inputs(x, features)?;
        let mut h = x.clone();
        for b in &self.blocks {
            let y = b.conv.forward(&h)?;
            let y = relu(&b.bn.forward_eval(&y)?);
            h = maxpool2(&y)?.output;
        }
        let h = h.reshape(&[n, FLATTEN_DIM])?;
        let h = relu(&self.bn1.forward_eval(&self.fc1.forward(&h)?)?);
        let h = relu(&self.bn2.forward_eval(&self.fc2.forward(&h)?)?);
        self.head.forward(&concat(&h, features)?)
    }

    pub fn forward_train(
        &self,
        x: &Tensor<T>,
        features: &Tensor<T>,
    ) -> Result<(Tensor<T>, TrainCache<T>)> {
        let n = self.check_inputs(x, features)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for b in &self.blocks {
            let y = b.conv.forward(&h)?;
            let (y, bn) = b.bn.forward_train(&y)?;
            let act = relu(&y);
            let pooled = maxpool2(&act)?;
            blocks.push(BlockCache {
                input: std::mem::replace(&mut h, pooled.output),
                bn,
                act,
                argmax: pooled.argmax,
            });
        }
        let flat = h.reshape(&[n, FLATTEN_DIM])?;
        let (y1, bn1) = self.bn1.forward_train(&self.fc1.forward(&flat)?)?;
        let act1 = relu(&y1);
        let (y2, bn2) = self.bn2.forward_train(&self.fc2.forward(&act1)?)?;
        let act2 = relu(&y2);
        let joined = concat(&act2, features)?;
        let out = self.head.forward(&joined)?;
        Ok((
            out,
            TrainCache {
                blocks,
                flat,
                bn1,
                act1,
                bn2,
                act2,
                joined,
            },
        ))
    }

    /// Training-mode forward starting at conv block `first_block` (4 = the
    /// fully connected part) from that block's input activation.
    pub fn forward_train_from(
        &self,
        first_block: usize,
        activation: &Tensor<T>,
        features: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut h = activation.clone();
        for b in &self.blocks[first_block.min(self.blocks.len())..] {
            let y = b.bn.forward_train(&b.conv.forward(&h)?)?.0;
            h = maxpool2(&relu(&y))?.output;
        }
        let n = h.batch();
        let h = h.reshape(&[n, FLATTEN_DIM])?;
        let h = relu(&self.bn1.forward_train(&self.fc1.forward(&h)?)?.0);
        let h = relu(&self.bn2.forward_train(&self.fc2.forward(&h)?)?.0);
        self.head.forward(&concat(&h, features)?)
    }

    /// Inputs to each conv block plus the final pooled activation, computed
    /// in training mode.
    pub fn block_activations(&self, x: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut acts = vec![x.clone()];
        for b in &self.blocks {
            let h = acts.last().expect("non-empty");
            let y = b.bn.forward_train(&b.conv.forward(h)?)?.0;
            acts.push(maxpool2(&relu(&y))?.output);
        }
        Ok(acts)
    }

    pub fn update_running_stats(&mut self, cache: &TrainCache<T>) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.bn.update_running_stats(&c.bn);
        }
        self.bn1.update_running_stats(&cache.bn1);
        self.bn2.update_running_stats(&cache.bn2);
    }

    pub fn backward(
        &self,
        cache: &TrainCache<T>,
        grad_out: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<ModelGrads<T>> {
        let n = cache.joined.batch();
        let mut tail = Vec::new();

        let (g_joined, head_g) = self.head.backward(&cache.joined, grad_out)?;
        let (g_act2, g_features) = concat_backward(&g_joined, FC2_OUT)?;
        let g = relu_backward(&cache.act2, &g_act2)?;
        let (g, bn2_g) = self.bn2.backward(&cache.bn2, &g)?;
        let (g, fc2_g) = self.fc2.backward(&cache.act1, &g)?;
        let g = relu_backward(&cache.act1, &g)?;
        let (g, bn1_g) = self.bn1.backward(&cache.bn1, &g)?;
        let (g, fc1_g) = self.fc1.backward(&cache.flat, &g)?;
        tail.extend([
            fc1_g.weight,
            fc1_g.bias,
            bn1_g.gamma,
            bn1_g.beta,
            fc2_g.weight,
            fc2_g.bias,
            bn2_g.gamma,
            bn2_g.beta,
            head_g.weight,
            head_g.bias,
        ]);

        let last = CONV_CHANNELS[3];
        let mut g = g.reshape(&[n, last, FINAL_SPATIAL, FINAL_SPATIAL])?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        let mut input_grad = None;
        for (i, (b, c)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let ga = maxpool2_backward(c.act.shape(), &c.argmax, &g)?;
            let ga = relu_backward(&c.act, &ga)?;
            let (gy, bn_g) = b.bn.backward(&c.bn, &ga)?;
            let conv_g = if i > 0 || want_input_grad {
                let (gx, conv_g) = b.conv.backward(&c.input, &gy)?;
                if i == 0 {
                    input_grad = Some(gx);
                } else {
                    g = gx;
                }
                conv_g
            } else {
                b.conv.backward_params(&c.input, &gy)?
            };
            block_grads.push([conv_g.weight, conv_g.bias, bn_g.gamma, bn_g.beta]);
        }
        let mut params: Vec<Vec<T>> = block_grads.into_iter().rev().flatten().collect();
        params.extend(tail);
        Ok(ModelGrads {
            params,
            input: input_grad,
            features: g_features,
        })
    }
}

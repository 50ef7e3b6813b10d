use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Batch normalization over dim 1 of `(N, C)` or `(N, C, H, W)` input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

/// Values saved by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased batch variance.
    pub var: Vec<T>,
    /// Values per channel (N times spatial size).
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(Self::DEFAULT_MOMENTUM),
            eps: T::lit(Self::DEFAULT_EPS),
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    fn layout(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let shape = x.shape();
        if shape.len() < 2 || shape[1] != self.channels {
            let mut want = shape.to_vec();
            if want.len() >= 2 {
                want[1] = self.channels;
            }
            return Err(Error::shape("batchnorm", &want, shape));
        }
        let spatial = shape[2..].iter().product();
        Ok((shape[0], spatial))
    }

    /// Normalizes with batch statistics. Running statistics are left
    /// untouched; see [`BatchNorm::update_running_stats`].
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (n, s) = self.layout(x)?;
        if n < 2 {
            return Err(Error::InvalidInput(
                "batchnorm in training mode needs a batch of at least 2".into(),
            ));
        }
        let c = self.channels;
        let count = n * s;
        let data = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let values = || (0..n).flat_map(move |i| data[(i * c + ch) * s..][..s].iter());
            let m = values().map(|v| v.as_f64()).sum::<f64>() / count as f64;
            let v = values().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / count as f64;
            mean[ch] = T::lit(m);
            var[ch] = T::lit(v);
            inv_std[ch] = T::lit(1.0 / (v + self.eps.as_f64()).sqrt());
        }
        let mut x_hat = vec![T::zero(); data.len()];
        let mut out = Tensor::zeros(x.shape());
        let y = out.data_mut();
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * s;
                let (m, is, g, b) = (mean[ch], inv_std[ch], self.gamma[ch], self.beta[ch]);
                for j in off..off + s {
                    let xh = (data[j] - m) * is;
                    x_hat[j] = xh;
                    y[j] = g * xh + b;
                }
            }
        }
        Ok((
            out,
            BnCache {
                x_hat,
                inv_std,
                mean,
                var,
                count,
            },
        ))
    }

    /// Exponential moving average update from one training batch; the
    /// running variance uses the unbiased batch estimate.
    pub fn update_running_stats(&mut self, cache: &BnCache<T>) {
        let m = self.momentum;
        let keep = T::one() - m;
        let unbias = T::lit(cache.count as f64 / (cache.count.max(2) - 1) as f64);
        for ch in 0..self.channels {
            self.running_mean[ch] = keep * self.running_mean[ch] + m * cache.mean[ch];
            self.running_var[ch] = keep * self.running_var[ch] + m * cache.var[ch] * unbias;
        }
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, s) = self.layout(x)?;
        let c = self.channels;
        let mut out = Tensor::zeros(x.shape());
        let y = out.data_mut();
        let data = x.data();
        for ch in 0..c {
            let is = T::one() / (self.running_var[ch] + self.eps).sqrt();
            let scale = self.gamma[ch] * is;
            let shift = self.beta[ch] - self.running_mean[ch] * scale;
            for i in 0..n {
                let off = (i * c + ch) * s;
                for j in off..off + s {
                    y[j] = data[j] * scale + shift;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, BnGrads<T>)> {
        let (n, s) = self.layout(grad_out)?;
        if grad_out.len() != cache.x_hat.len() {
            return Err(Error::shape(
                "batchnorm backward",
                &[cache.x_hat.len()],
                &[grad_out.len()],
            ));
        }
        let c = self.channels;
        let gy = grad_out.data();
        let xh = &cache.x_hat;
        let mut grads = BnGrads {
            gamma: vec![T::zero(); c],
            beta: vec![T::zero(); c],
        };
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
            for i in 0..n {
                let off = (i * c + ch) * s;
                for j in off..off + s {
                    sum_dy += gy[j];
                    sum_dy_xh += gy[j] * xh[j];
                }
            }
            grads.beta[ch] = sum_dy;
            grads.gamma[ch] = sum_dy_xh;
        }
        let mut grad_in = Tensor::zeros(grad_out.shape());
        let gx = grad_in.data_mut();
        let m = T::lit(cache.count as f64);
        for ch in 0..c {
            let k = self.gamma[ch] * cache.inv_std[ch] / m;
            let (sd, sdx) = (grads.beta[ch], grads.gamma[ch]);
            for i in 0..n {
                let off = (i * c + ch) * s;
                for j in off..off + s {
                    gx[j] = k * (m * gy[j] - sd - xh[j] * sdx);
                }
            }
        }
        Ok((grad_in, grads))
    }
}

use rayon::prelude::*;

use super::scalar::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// 3x3 convolution, stride 1, zero padding 1. Weight layout is
/// `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

const KSIZE: usize = 9;

fn im2col<T: Real>(x: &[T], channels: usize, h: usize, w: usize, col: &mut [T]) {
    let hw = h * w;
    for ci in 0..channels {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * KSIZE + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], channels: usize, h: usize, w: usize, x: &mut [T]) {
    let hw = h * w;
    for ci in 0..channels {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * KSIZE + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a += b;
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv2d<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            weight: vec![T::zero(); out_channels * in_channels * KSIZE],
            bias: vec![T::zero(); out_channels],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
        let (n, c, h, w) = x.dims4("conv2d")?;
        if c != self.in_channels || h == 0 || w == 0 {
            return Err(Error::shape("conv2d", &[n, self.in_channels, h, w], x.shape()));
        }
        Ok((n, c, h, w))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.check(x)?;
        let (hw, oc) = (h * w, self.out_channels);
        let mut out = Tensor::zeros(&[n, oc, h, w]);
        out.data_mut()
            .par_chunks_mut(oc * hw)
            .zip(x.data().par_chunks(c * hw))
            .for_each(|(y, xs)| {
                let mut col = vec![T::zero(); c * KSIZE * hw];
                im2col(xs, c, h, w, &mut col);
                for (row, &b) in y.chunks_mut(hw).zip(&self.bias) {
                    row.fill(b);
                }
                gemm(false, false, oc, hw, c * KSIZE, &self.weight, &col, T::one(), y);
            });
        Ok(out)
    }

    /// Gradients with respect to the input and the parameters.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, ConvGrads<T>)> {
        let (grad_in, grads) = self.backward_impl(x, grad_out, true)?;
        Ok((grad_in.expect("input gradient requested"), grads))
    }

    /// Parameter gradients only (first layer of a network).
    pub fn backward_params(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        Ok(self.backward_impl(x, grad_out, false)?.1)
    }

    fn backward_impl(
        &self,
        x: &Tensor<T>,
        grad_out: &Tensor<T>,
        want_input: bool,
    ) -> Result<(Option<Tensor<T>>, ConvGrads<T>)> {
        let (n, c, h, w) = self.check(x)?;
        let (hw, oc, k) = (h * w, self.out_channels, c * KSIZE);
        if grad_out.shape() != [n, oc, h, w] {
            return Err(Error::shape("conv2d backward", &[n, oc, h, w], grad_out.shape()));
        }
        // Per-sample partials reduced in sample order keep the result
        // independent of the worker count.
        let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = x
            .data()
            .par_chunks(c * hw)
            .zip(grad_out.data().par_chunks(oc * hw))
            .map(|(xs, gy)| {
                let mut col = vec![T::zero(); k * hw];
                im2col(xs, c, h, w, &mut col);
                let mut gw = vec![T::zero(); oc * k];
                gemm(false, true, oc, k, hw, gy, &col, T::zero(), &mut gw);
                let gb: Vec<T> = gy.chunks(hw).map(|r| r.iter().copied().sum()).collect();
                let gx = if want_input {
                    let mut gcol = vec![T::zero(); k * hw];
                    gemm(true, false, k, hw, oc, &self.weight, gy, T::zero(), &mut gcol);
                    let mut gx = vec![T::zero(); c * hw];
                    col2im(&gcol, c, h, w, &mut gx);
                    gx
                } else {
                    Vec::new()
                };
                (gx, gw, gb)
            })
            .collect();

        let mut grads = ConvGrads {
            weight: vec![T::zero(); oc * k],
            bias: vec![T::zero(); oc],
        };
        let mut grad_in = want_input.then(|| Vec::with_capacity(n * c * hw));
        for (gx, gw, gb) in partials {
            for (a, b) in grads.weight.iter_mut().zip(&gw) {
                *a += *b;
            }
            for (a, b) in grads.bias.iter_mut().zip(&gb) {
                *a += *b;
            }
            if let Some(g) = grad_in.as_mut() {
                g.extend_from_slice(&gx);
            }
        }
        let grad_in = grad_in
            .map(|g| Tensor::from_vec(&[n, c, h, w], g))
            .transpose()?;
        Ok((grad_in, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_kernel_is_identity() {
        let mut conv = Conv2d::<f64>::zeros(1, 1);
        conv.weight[4] = 1.0;
        let x = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        assert_eq!(conv.forward(&x).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let conv = Conv2d::<f32>::zeros(3, 4);
        let x = Tensor::from_vec(&[2, 3, 4, 5], vec![0.7; 120]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_kernel_pads_with_zeros() {
        // Weight at (ky=1, kx=0) reads the left neighbour.
        let mut conv = Conv2d::<f64>::zeros(1, 1);
        conv.weight[3] = 1.0;
        conv.bias[0] = 0.5;
        let x = Tensor::from_vec(&[1, 1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.5, 1.5, 2.5, 0.5, 4.5, 5.5]);
    }

    #[test]
    fn channel_mismatch_names_shapes() {
        let conv = Conv2d::<f32>::zeros(3, 4);
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let err = conv.forward(&x).unwrap_err();
        assert!(err.to_string().contains("[1, 3, 4, 4]"), "{err}");
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), g> == <x, col2im(g)>
        let (c, h, w) = (2, 4, 3);
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let g: Vec<f64> = (0..c * 9 * h * w).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut col = vec![0.0; g.len()];
        im2col(&x, c, h, w, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&g, c, h, w, &mut back);
        let lhs: f64 = col.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}

use super::scalar::gemm;
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer, `y = x W^T + b` with `W` stored `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        match *x.shape() {
            [n, f] if f == self.in_features => Ok(n),
            _ => Err(Error::shape(
                "fully_connected",
                &[x.batch(), self.in_features],
                x.shape(),
            )),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check(x)?;
        let out_f = self.out_features;
        let mut y = Tensor::zeros(&[n, out_f]);
        for row in y.data_mut().chunks_mut(out_f) {
            row.copy_from_slice(&self.bias);
        }
        gemm(false, true, n, out_f, self.in_features, x.data(), &self.weight, T::one(), y.data_mut());
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, LinearGrads<T>)> {
        let n = self.check(x)?;
        let (inf, outf) = (self.in_features, self.out_features);
        if grad_out.shape() != [n, outf] {
            return Err(Error::shape("fully_connected backward", &[n, outf], grad_out.shape()));
        }
        let mut gw = vec![T::zero(); outf * inf];
        gemm(true, false, outf, inf, n, grad_out.data(), x.data(), T::zero(), &mut gw);
        let mut gb = vec![T::zero(); outf];
        for row in grad_out.data().chunks(outf) {
            for (a, &b) in gb.iter_mut().zip(row) {
                *a += b;
            }
        }
        let mut gx = Tensor::zeros(&[n, inf]);
        gemm(false, false, n, inf, outf, grad_out.data(), &self.weight, T::zero(), gx.data_mut());
        Ok((gx, LinearGrads { weight: gw, bias: gb }))
    }
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
    y
}

/// Backward of ReLU given its output; the subgradient at 0 is 0.
pub fn relu_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape("relu backward", output.shape(), grad_out.shape()));
    }
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        if !(y > T::zero()) {
            *gv = T::zero();
        }
    }
    Ok(g)
}

/// Row-wise concatenation of `(N, F)` and `(N, E)` into `(N, F + E)`.
pub fn concat<T: Real>(features: &Tensor<T>, extra: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f) = features.dims2("concat")?;
    let (m, e) = extra.dims2("concat")?;
    if n != m {
        return Err(Error::shape("concat", &[n, e], extra.shape()));
    }
    let mut out = Vec::with_capacity(n * (f + e));
    for (a, b) in features.data().chunks(f.max(1)).zip(extra.data().chunks(e.max(1))) {
        out.extend_from_slice(&a[..f]);
        out.extend_from_slice(&b[..e]);
    }
    Tensor::from_vec(&[n, f + e], out)
}

/// Splits a concatenated gradient back into its `(N, split)` and
/// `(N, rest)` parts.
pub fn concat_backward<T: Real>(grad: &Tensor<T>, split: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, total) = grad.dims2("concat backward")?;
    if split > total {
        return Err(Error::shape("concat backward", &[n, split], grad.shape()));
    }
    let mut left = Vec::with_capacity(n * split);
    let mut right = Vec::with_capacity(n * (total - split));
    for row in grad.data().chunks(total.max(1)) {
        left.extend_from_slice(&row[..split]);
        right.extend_from_slice(&row[split..]);
    }
    Ok((
        Tensor::from_vec(&[n, split], left)?,
        Tensor::from_vec(&[n, total - split], right)?,
    ))
}

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// 2x2 max pooling with stride 2. `argmax` holds, per output element, the
/// flat index of the selected input element.
#[derive(Debug, Clone)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    pub argmax: Vec<u32>,
}

pub fn maxpool2<T: Real>(x: &Tensor<T>) -> Result<PoolOutput<T>> {
    let (n, c, h, w) = x.dims4("maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::InvalidInput(format!(
            "maxpool2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let i00 = base + 2 * oy * w + 2 * ox;
                let mut best = i00;
                // Row-major order; strict comparison keeps the first maximum.
                for idx in [i00 + 1, i00 + w, i00 + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok(PoolOutput {
        output: Tensor::from_vec(&[n, c, oh, ow], out)?,
        argmax,
    })
}

/// Routes each output gradient to its argmax input position.
pub fn maxpool2_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::shape("maxpool2 backward", &[argmax.len()], &[grad_out.len()]));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &v) in argmax.iter().zip(grad_out.data()) {
        g[idx as usize] += v;
    }
    Ok(grad)
}

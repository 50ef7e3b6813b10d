use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean squared error over all elements, with its gradient
/// `2 (pred - target) / N`.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.len() != target.len() {
        return Err(Error::shape("mse_loss", target.shape(), pred.shape()));
    }
    let n = T::lit(pred.len().max(1) as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut sum = T::zero();
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let d = p - t;
        sum += d * d;
        *g = T::lit(2.0) * d / n;
    }
    Ok((sum / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_prediction_has_zero_loss() {
        let p = Tensor::from_vec(&[3, 1], vec![0.1f32, 0.2, 0.3]).unwrap();
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_error() {
        let p = Tensor::from_vec(&[1, 1], vec![0.0f64]).unwrap();
        let t = Tensor::from_vec(&[1, 1], vec![1.0f64]).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g.data(), &[-2.0]);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = Tensor::<f32>::zeros(&[2, 1]);
        let t = Tensor::<f32>::zeros(&[3, 1]);
        assert!(mse_loss(&p, &t).is_err());
    }
}

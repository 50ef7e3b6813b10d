//! Neural-network kernels with hand-written backward passes.
//!
//! All kernels are generic over [`Real`] so the same code runs in `f32` for
//! training and in `f64` for finite-difference checks. Work split across
//! threads is reduced in a fixed order, so results do not depend on the
//! worker count.

mod batchnorm;
mod conv;
mod linear;
mod loss;
mod optim;
mod pool;
mod scalar;
mod tensor;

pub use batchnorm::{BatchNorm, BnCache, BnGrads};
pub use conv::{Conv2d, ConvGrads};
pub use linear::{concat, concat_backward, relu, relu_backward, Linear, LinearGrads};
pub use loss::mse_loss;
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind, ParamSlot};
pub use pool::{maxpool2, maxpool2_backward, PoolOutput};
pub use scalar::Real;
pub use tensor::Tensor;

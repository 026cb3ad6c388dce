//! Dense tensors and the handful of network layers the policy needs, each
//! with an explicit backward pass. Kernels are generic over [`Scalar`] so the
//! same code trains in `f32` and is gradient-checked in `f64`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

mod checkpoint;
mod conv;
mod loss;
mod ops;
mod optim;
mod tensor;

pub use checkpoint::{load_params, save_params, CHECKPOINT_MAGIC};
pub use conv::{conv2d, conv2d_backward, ConvSpec, LayerParams};
pub use loss::{bce_loss, huber_loss, BCE_EPS};
pub use ops::{
    concat_channels, maxpool2x2, maxpool2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward,
    upsample_bilinear, upsample_bilinear2x, upsample_bilinear_backward, PoolIndices,
};
pub use optim::{sgd_momentum_step, SgdConfig};
pub use tensor::Tensor4;

/// Floating point element type of tensors.
pub trait Scalar:
    num_traits::Float + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    fn cast(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

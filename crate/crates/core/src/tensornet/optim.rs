use serde::{Deserialize, Serialize};

use super::{LayerParams, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 1e-4, momentum: 0.9, weight_decay: 1.0 / 32.0 }
    }
}

/// Momentum SGD with weight decay folded into the gradient:
/// `m <- momentum * m + (g + wd * p)`, `p <- p - lr * m`. Biases decay too.
pub fn sgd_momentum_step<T: Scalar>(params: &mut LayerParams<T>, cfg: &SgdConfig) -> Result<()> {
    if params.kernel_grad.len() != params.kernel.len() || params.bias_grad.len() != params.bias.len() {
        return Err(Error::Shape("gradient buffers do not match parameters".into()));
    }
    let (lr, mu, wd) = (T::cast(cfg.lr), T::cast(cfg.momentum), T::cast(cfg.weight_decay));
    let update = |p: &mut [T], g: &[T], m: &mut [T]| {
        for ((p, &g), m) in p.iter_mut().zip(g).zip(m.iter_mut()) {
            *m = mu * *m + (g + wd * *p);
            *p -= lr * *m;
        }
    };
    update(params.kernel.data_mut(), &params.kernel_grad, &mut params.kernel_momentum);
    update(&mut params.bias, &params.bias_grad, &mut params.bias_momentum);
    Ok(())
}

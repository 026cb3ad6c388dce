//! Trunk and head stacks with cached activations for backprop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensornet::{
    concat_channels, conv2d, conv2d_backward, maxpool2x2, maxpool2x2_backward, relu, relu_backward, upsample_bilinear,
    upsample_bilinear_backward, ConvSpec, LayerParams, PoolIndices, Scalar, Tensor4,
};

/// Channel widths of the perception trunk and the two heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Output channels of the four trunk convolutions.
    pub trunk: [usize; 4],
    /// Output channels of the first three head convolutions (the last has 1).
    pub head: [usize; 3],
    /// Number of constant conditioning channels tiled onto the trunk features.
    pub tile: usize,
    pub kernel: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { trunk: [32, 32, 64, 64], head: [32, 16, 8], tile: 8, kernel: 3 }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.trunk.contains(&0) || self.head.contains(&0) {
            return Err(Error::Config(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrunkCache<T> {
    x: Tensor4<T>,
    z: [Tensor4<T>; 4],
    a: [Tensor4<T>; 4],
    pools: [PoolIndices; 2],
    p1: Tensor4<T>,
    pub mu: Tensor4<T>,
}

#[derive(Debug, Clone)]
pub struct HeadCache<T> {
    h0: Tensor4<T>,
    z: [Tensor4<T>; 4],
    a: [Tensor4<T>; 3],
    u: [Tensor4<T>; 2],
    /// Raw head output, (n, 1, H, W).
    pub out: Tensor4<T>,
}

/// Convolutional trunk plus a grasp head and an optional throw head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: ArchConfig,
    pub in_channels: usize,
    pub trunk: Vec<LayerParams<T>>,
    pub grasp: Vec<LayerParams<T>>,
    pub throw: Option<Vec<LayerParams<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn new<R: Rng>(arch: ArchConfig, in_channels: usize, with_throw_head: bool, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let k = arch.kernel;
        let t = arch.trunk;
        let trunk = vec![
            LayerParams::he_normal(t[0], in_channels, k, k, rng),
            LayerParams::he_normal(t[1], t[0], k, k, rng),
            LayerParams::he_normal(t[2], t[1], k, k, rng),
            LayerParams::he_normal(t[3], t[2], k, k, rng),
        ];
        let grasp = Self::make_head(&arch, rng);
        let throw = with_throw_head.then(|| Self::make_head(&arch, rng));
        Ok(Self { arch, in_channels, trunk, grasp, throw })
    }

    fn make_head<R: Rng>(arch: &ArchConfig, rng: &mut R) -> Vec<LayerParams<T>> {
        let k = arch.kernel;
        let h = arch.head;
        vec![
            LayerParams::he_normal(h[0], arch.trunk[3] + arch.tile, k, k, rng),
            LayerParams::he_normal(h[1], h[0], k, k, rng),
            LayerParams::he_normal(h[2], h[1], k, k, rng),
            LayerParams::he_normal(1, h[2], k, k, rng),
        ]
    }

    fn spec(&self) -> ConvSpec {
        ConvSpec::same(self.arch.kernel)
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerParams<T>> {
        self.trunk.iter().chain(&self.grasp).chain(self.throw.iter().flatten())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams<T>> {
        self.trunk.iter_mut().chain(self.grasp.iter_mut()).chain(self.throw.iter_mut().flatten())
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.num_params()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.layers_mut().for_each(|l| l.zero_grad());
    }

    pub fn trunk_forward(&self, x: Tensor4<T>) -> Result<TrunkCache<T>> {
        if x.channels() != self.in_channels {
            return Err(Error::Shape(format!("network expects {} input channels, got {}", self.in_channels, x.channels())));
        }
        let spec = self.spec();
        let z0 = conv2d(&x, &self.trunk[0], spec)?;
        let a0 = relu(&z0);
        let z1 = conv2d(&a0, &self.trunk[1], spec)?;
        let a1 = relu(&z1);
        let (p1, pool0) = maxpool2x2(&a1)?;
        let z2 = conv2d(&p1, &self.trunk[2], spec)?;
        let a2 = relu(&z2);
        let z3 = conv2d(&a2, &self.trunk[3], spec)?;
        let a3 = relu(&z3);
        let (mu, pool1) = maxpool2x2(&a3)?;
        Ok(TrunkCache { x, z: [z0, z1, z2, z3], a: [a0, a1, a2, a3], pools: [pool0, pool1], p1, mu })
    }

    /// Runs one head on trunk features with `cond` tiled as constant channels.
    pub fn head_forward(&self, layers: &[LayerParams<T>], trunk: &TrunkCache<T>, cond: T) -> Result<HeadCache<T>> {
        let mu = &trunk.mu;
        let [n, _, mh, mw] = mu.dims();
        let tile = Tensor4::filled([n, self.arch.tile, mh, mw], cond);
        let h0 = concat_channels(mu, &tile)?;
        let spec = self.spec();
        let z0 = conv2d(&h0, &layers[0], spec)?;
        let a0 = relu(&z0);
        let z1 = conv2d(&a0, &layers[1], spec)?;
        let a1 = relu(&z1);
        let u0 = upsample_bilinear(&a1, trunk.p1.height(), trunk.p1.width());
        let z2 = conv2d(&u0, &layers[2], spec)?;
        let a2 = relu(&z2);
        let u1 = upsample_bilinear(&a2, trunk.x.height(), trunk.x.width());
        let out = conv2d(&u1, &layers[3], spec)?;
        Ok(HeadCache { h0, z: [z0, z1, z2, out.clone()], a: [a0, a1, a2], u: [u0, u1], out })
    }

    /// Backprop through a head given d(loss)/d(out). Accumulates the head's
    /// parameter gradients and returns the gradient w.r.t. the trunk features.
    pub fn head_backward(
        layers: &mut [LayerParams<T>],
        spec: ConvSpec,
        cache: &HeadCache<T>,
        grad_out: &Tensor4<T>,
        mu_channels: usize,
    ) -> Result<Tensor4<T>> {
        let need = |t: Option<Tensor4<T>>| t.ok_or_else(|| Error::Shape("missing input gradient".into()));
        let g_u1 = need(conv2d_backward(&cache.u[1], &mut layers[3], spec, grad_out, true)?)?;
        let g_a2 = upsample_bilinear_backward(cache.a[2].dims(), &g_u1);
        let g_z2 = relu_backward(&cache.z[2], &g_a2);
        let g_u0 = need(conv2d_backward(&cache.u[0], &mut layers[2], spec, &g_z2, true)?)?;
        let g_a1 = upsample_bilinear_backward(cache.a[1].dims(), &g_u0);
        let g_z1 = relu_backward(&cache.z[1], &g_a1);
        let g_a0 = need(conv2d_backward(&cache.a[0], &mut layers[1], spec, &g_z1, true)?)?;
        let g_z0 = relu_backward(&cache.z[0], &g_a0);
        let g_h0 = need(conv2d_backward(&cache.h0, &mut layers[0], spec, &g_z0, true)?)?;
        // Drop the gradient flowing into the tiled conditioning channels.
        let [n, _, h, w] = g_h0.dims();
        let mut g_mu = Tensor4::zeros([n, mu_channels, h, w]);
        for b in 0..n {
            for c in 0..mu_channels {
                g_mu.plane_mut(b, c).copy_from_slice(g_h0.plane(b, c));
            }
        }
        Ok(g_mu)
    }

    pub fn grasp_backward(&mut self, cache: &HeadCache<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (spec, c) = (self.spec(), self.arch.trunk[3]);
        Self::head_backward(&mut self.grasp, spec, cache, grad_out, c)
    }

    pub fn throw_backward(&mut self, cache: &HeadCache<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (spec, c) = (self.spec(), self.arch.trunk[3]);
        let layers = self.throw.as_mut().ok_or(Error::Config("network has no throw head".into()))?;
        Self::head_backward(layers, spec, cache, grad_out, c)
    }

    pub fn trunk_backward(&mut self, cache: &TrunkCache<T>, grad_mu: &Tensor4<T>) -> Result<()> {
        let spec = self.spec();
        let need = |t: Option<Tensor4<T>>| t.ok_or_else(|| Error::Shape("missing input gradient".into()));
        let g_a3 = maxpool2x2_backward(&cache.pools[1], grad_mu)?;
        let g_z3 = relu_backward(&cache.z[3], &g_a3);
        let g_a2 = need(conv2d_backward(&cache.a[2], &mut self.trunk[3], spec, &g_z3, true)?)?;
        let g_z2 = relu_backward(&cache.z[2], &g_a2);
        let g_p1 = need(conv2d_backward(&cache.p1, &mut self.trunk[2], spec, &g_z2, true)?)?;
        let g_a1 = maxpool2x2_backward(&cache.pools[0], &g_p1)?;
        let g_z1 = relu_backward(&cache.z[1], &g_a1);
        let g_a0 = need(conv2d_backward(&cache.a[0], &mut self.trunk[1], spec, &g_z1, true)?)?;
        let g_z0 = relu_backward(&cache.z[0], &g_a0);
        conv2d_backward(&cache.x, &mut self.trunk[0], spec, &g_z0, false)?;
        Ok(())
    }
}

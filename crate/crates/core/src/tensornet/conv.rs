use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Stride 1 with padding that preserves spatial size for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2 }
    }

    fn output_size(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if self.stride == 0 || padded < kernel {
            return Err(Error::Shape(format!("kernel {kernel} larger than padded input {padded}")));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Weights, biases, their gradients and momentum buffers for one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// (out_channels, in_channels, kh, kw).
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
    pub kernel_grad: Vec<T>,
    pub bias_grad: Vec<T>,
    pub kernel_momentum: Vec<T>,
    pub bias_momentum: Vec<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn zeros(out_ch: usize, in_ch: usize, kh: usize, kw: usize) -> Self {
        let n = out_ch * in_ch * kh * kw;
        Self {
            kernel: Tensor4::zeros([out_ch, in_ch, kh, kw]),
            bias: vec![T::zero(); out_ch],
            kernel_grad: vec![T::zero(); n],
            bias_grad: vec![T::zero(); out_ch],
            kernel_momentum: vec![T::zero(); n],
            bias_momentum: vec![T::zero(); out_ch],
        }
    }

    /// He (fan-in) normal initialisation with zero biases.
    pub fn he_normal<R: Rng>(out_ch: usize, in_ch: usize, kh: usize, kw: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(out_ch, in_ch, kh, kw);
        let std = (2.0 / (in_ch * kh * kw) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in p.kernel.data_mut() {
            *w = T::cast(normal.sample(rng));
        }
        p
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.dims()[1]
    }

    pub fn num_params(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    pub fn zero_grad(&mut self) {
        self.kernel_grad.iter_mut().for_each(|g| *g = T::zero());
        self.bias_grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn grad_is_zero(&self) -> bool {
        self.kernel_grad.iter().chain(&self.bias_grad).all(|g| *g == T::zero())
    }
}

/// Cross-correlation of `input` with the layer kernel plus bias.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, params: &LayerParams<T>, spec: ConvSpec) -> Result<Tensor4<T>> {
    let [n, c, h, w] = input.dims();
    let [oc, ic, kh, kw] = params.kernel.dims();
    if c != ic {
        return Err(Error::Shape(format!("conv expects {ic} input channels, got {c}")));
    }
    let (oh, ow) = (spec.output_size(h, kh)?, spec.output_size(w, kw)?);
    let mut out = Tensor4::zeros([n, oc, oh, ow]);
    let kernel = params.kernel.data();
    for b in 0..n {
        for o in 0..oc {
            let out_plane = out.plane_mut(b, o);
            out_plane.iter_mut().for_each(|v| *v = params.bias[o]);
            for i in 0..ic {
                let in_plane = input.plane(b, i);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = kernel[((o * ic + i) * kh + ky) * kw + kx];
                        if spec.stride == 1 {
                            shifted_axpy(out_plane, in_plane, wv, (oh, ow), (h, w), shift(ky, spec.padding), shift(kx, spec.padding));
                        } else {
                            strided_axpy(out_plane, in_plane, wv, (oh, ow), (h, w), spec, ky, kx);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv layer. Returns the input gradient and accumulates
/// kernel and bias gradients into `params`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    params: &mut LayerParams<T>,
    spec: ConvSpec,
    grad_out: &Tensor4<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor4<T>>> {
    let [n, c, h, w] = input.dims();
    let [oc, ic, kh, kw] = params.kernel.dims();
    let (oh, ow) = (spec.output_size(h, kh)?, spec.output_size(w, kw)?);
    if c != ic || grad_out.dims() != [n, oc, oh, ow] {
        return Err(Error::Shape(format!("conv backward: grad {:?} vs expected {:?}", grad_out.dims(), [n, oc, oh, ow])));
    }
    let mut grad_in = need_input_grad.then(|| Tensor4::zeros([n, c, h, w]));
    for b in 0..n {
        for o in 0..oc {
            let g_plane = grad_out.plane(b, o);
            params.bias_grad[o] += g_plane.iter().copied().sum::<T>();
            for i in 0..ic {
                let in_plane = input.plane(b, i);
                for ky in 0..kh {
                    for kx in 0..kw {
                        let k_idx = ((o * ic + i) * kh + ky) * kw + kx;
                        if spec.stride == 1 {
                            let (dy, dx) = (shift(ky, spec.padding), shift(kx, spec.padding));
                            params.kernel_grad[k_idx] += shifted_dot(g_plane, in_plane, (oh, ow), (h, w), dy, dx);
                            if let Some(gi) = grad_in.as_mut() {
                                let wv = params.kernel.data()[k_idx];
                                shifted_scatter(gi.plane_mut(b, i), g_plane, wv, (oh, ow), (h, w), dy, dx);
                            }
                        } else {
                            let wv = params.kernel.data()[k_idx];
                            let gi = grad_in.as_mut().map(|g| g.plane_mut(b, i));
                            params.kernel_grad[k_idx] += strided_backward(gi, g_plane, in_plane, wv, (oh, ow), (h, w), spec, ky, kx);
                        }
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

fn shift(k: usize, padding: usize) -> isize {
    k as isize - padding as isize
}

/// Valid output range [lo, hi) for an input offset `d` along one axis.
fn valid_range(out_len: usize, in_len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (in_len as isize - d).min(out_len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// out[y][x] += w * in[y + dy][x + dx] wherever the input index is valid.
fn shifted_axpy<T: Scalar>(out: &mut [T], inp: &[T], wv: T, (oh, ow): (usize, usize), (h, w): (usize, usize), dy: isize, dx: isize) {
    let (y0, y1) = valid_range(oh, h, dy);
    let (x0, x1) = valid_range(ow, w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let iy = (y as isize + dy) as usize;
        let o = &mut out[y * ow + x0..y * ow + x1];
        let s = (x0 as isize + dx) as usize;
        let i = &inp[iy * w + s..iy * w + s + (x1 - x0)];
        for (a, &b) in o.iter_mut().zip(i) {
            *a += wv * b;
        }
    }
}

/// Σ g[y][x] * in[y + dy][x + dx].
fn shifted_dot<T: Scalar>(g: &[T], inp: &[T], (oh, ow): (usize, usize), (h, w): (usize, usize), dy: isize, dx: isize) -> T {
    let (y0, y1) = valid_range(oh, h, dy);
    let (x0, x1) = valid_range(ow, w, dx);
    let mut acc = T::zero();
    if x0 >= x1 {
        return acc;
    }
    for y in y0..y1 {
        let iy = (y as isize + dy) as usize;
        let s = (x0 as isize + dx) as usize;
        let gr = &g[y * ow + x0..y * ow + x1];
        let ir = &inp[iy * w + s..iy * w + s + (x1 - x0)];
        acc += gr.iter().zip(ir).fold(T::zero(), |a, (&p, &q)| a + p * q);
    }
    acc
}

/// grad_in[y + dy][x + dx] += w * g[y][x].
fn shifted_scatter<T: Scalar>(gi: &mut [T], g: &[T], wv: T, (oh, ow): (usize, usize), (h, w): (usize, usize), dy: isize, dx: isize) {
    let (y0, y1) = valid_range(oh, h, dy);
    let (x0, x1) = valid_range(ow, w, dx);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let iy = (y as isize + dy) as usize;
        let s = (x0 as isize + dx) as usize;
        let dst = &mut gi[iy * w + s..iy * w + s + (x1 - x0)];
        let src = &g[y * ow + x0..y * ow + x1];
        for (a, &b) in dst.iter_mut().zip(src) {
            *a += wv * b;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn strided_axpy<T: Scalar>(out: &mut [T], inp: &[T], wv: T, (oh, ow): (usize, usize), (h, w): (usize, usize), spec: ConvSpec, ky: usize, kx: usize) {
    for y in 0..oh {
        let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for x in 0..ow {
            let ix = (x * spec.stride + kx) as isize - spec.padding as isize;
            if ix >= 0 && ix < w as isize {
                out[y * ow + x] += wv * inp[iy as usize * w + ix as usize];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn strided_backward<T: Scalar>(
    mut gi: Option<&mut [T]>,
    g: &[T],
    inp: &[T],
    wv: T,
    (oh, ow): (usize, usize),
    (h, w): (usize, usize),
    spec: ConvSpec,
    ky: usize,
    kx: usize,
) -> T {
    let mut acc = T::zero();
    for y in 0..oh {
        let iy = (y * spec.stride + ky) as isize - spec.padding as isize;
        if iy < 0 || iy >= h as isize {
            continue;
        }
        for x in 0..ow {
            let ix = (x * spec.stride + kx) as isize - spec.padding as isize;
            if ix >= 0 && ix < w as isize {
                let idx = iy as usize * w + ix as usize;
                acc += g[y * ow + x] * inp[idx];
                if let Some(gi) = gi.as_deref_mut() {
                    gi[idx] += wv * g[y * ow + x];
                }
            }
        }
    }
    acc
}

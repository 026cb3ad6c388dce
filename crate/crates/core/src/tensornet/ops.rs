use super::{Scalar, Tensor4};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of relu given the layer input.
pub fn relu_backward<T: Scalar>(input: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| T::one() / (T::one() + (-v).exp()))
}

/// Gradient of sigmoid given the layer output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor4<T>, grad_out: &Tensor4<T>) -> Tensor4<T> {
    let mut g = grad_out.clone();
    for (gv, &y) in g.data_mut().iter_mut().zip(output.data()) {
        *gv *= y * (T::one() - y);
    }
    g
}

/// Flat input index of each pooled maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_dims: [usize; 4],
    pub argmax: Vec<u32>,
}

/// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped; ties go
/// to the first element in row-major order.
pub fn maxpool2x2<T: Scalar>(x: &Tensor4<T>) -> Result<(Tensor4<T>, PoolIndices)> {
    let [n, c, h, w] = x.dims();
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("maxpool2x2 needs at least 2x2, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = vec![0u32; n * c * oh * ow];
    let data = x.data();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            let obase = (b * c + ch) * oh * ow;
            for y in 0..oh {
                for xo in 0..ow {
                    let mut best = base + 2 * y * w + 2 * xo;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = base + (2 * y + dy) * w + 2 * xo + dx;
                        if data[i] > data[best] {
                            best = i;
                        }
                    }
                    out.data_mut()[obase + y * ow + xo] = data[best];
                    argmax[obase + y * ow + xo] = best as u32;
                }
            }
        }
    }
    Ok((out, PoolIndices { input_dims: x.dims(), argmax }))
}

pub fn maxpool2x2_backward<T: Scalar>(idx: &PoolIndices, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if grad_out.len() != idx.argmax.len() {
        return Err(Error::Shape("maxpool backward: gradient does not match pooled shape".into()));
    }
    let mut g = Tensor4::zeros(idx.input_dims);
    let gd = g.data_mut();
    for (&i, &v) in idx.argmax.iter().zip(grad_out.data()) {
        gd[i as usize] += v;
    }
    Ok(g)
}

/// Source taps for one axis of align-corners-false bilinear resizing.
fn taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize to (out_h, out_w) using the align-corners-false convention
/// (pixel centres at half-integers, edges clamped).
pub fn upsample_bilinear<T: Scalar>(x: &Tensor4<T>, out_h: usize, out_w: usize) -> Tensor4<T> {
    let [n, c, h, w] = x.dims();
    let ty = taps(h, out_h);
    let tx = taps(w, out_w);
    let mut out = Tensor4::zeros([n, c, out_h, out_w]);
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane(b, ch);
            let dst = out.plane_mut(b, ch);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::cast(ly);
                let r0 = &src[y0 * w..y0 * w + w];
                let r1 = &src[y1 * w..y1 * w + w];
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::cast(lx);
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bot = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    dst[oy * out_w + ox] = top + (bot - top) * ly;
                }
            }
        }
    }
    out
}

pub fn upsample_bilinear2x<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    upsample_bilinear(x, 2 * x.height(), 2 * x.width())
}

pub fn upsample_bilinear_backward<T: Scalar>(input_dims: [usize; 4], grad_out: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = input_dims;
    let (oh, ow) = (grad_out.height(), grad_out.width());
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut g = Tensor4::zeros(input_dims);
    for b in 0..n {
        for ch in 0..c {
            let src = grad_out.plane(b, ch);
            let dst = g.plane_mut(b, ch);
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                let ly = T::cast(ly);
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let lx = T::cast(lx);
                    let v = src[oy * ow + ox];
                    let top = v * (T::one() - ly);
                    let bot = v * ly;
                    dst[y0 * w + x0] += top * (T::one() - lx);
                    dst[y0 * w + x1] += top * lx;
                    dst[y1 * w + x0] += bot * (T::one() - lx);
                    dst[y1 * w + x1] += bot * lx;
                }
            }
        }
    }
    g
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let [na, ca, h, w] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if na != nb || h != hb || w != wb {
        return Err(Error::Shape(format!("cannot concat {:?} with {:?}", a.dims(), b.dims())));
    }
    let mut out = Tensor4::zeros([na, ca + cb, h, w]);
    for n in 0..na {
        for c in 0..ca {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..cb {
            out.plane_mut(n, ca + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

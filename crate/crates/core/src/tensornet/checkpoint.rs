//! Little-endian weight file:
//!
//! ```text
//! magic   b"TSNT"
//! u32     format version (1)
//! u32     layer count L
//! L x     { u32 out, u32 in, u32 kh, u32 kw }      shape table
//! L x     { f32[out*in*kh*kw] kernel, f32[out] bias }
//! ```

use std::io::{Read, Write};

use super::{LayerParams, Scalar};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSNT";
const VERSION: u32 = 1;

pub fn save_params<T: Scalar, W: Write>(layers: &[&LayerParams<T>], mut out: W) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        for d in l.kernel.dims() {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for l in layers {
        for v in l.kernel.data().iter().chain(&l.bias) {
            out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Loads weights into `layers`, which must already have the stored shapes.
/// Momentum and gradient buffers are reset.
pub fn load_params<T: Scalar, R: Read>(layers: &mut [&mut LayerParams<T>], mut input: R) -> Result<()> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut input)? as usize;
    if count != layers.len() {
        return Err(Error::Checkpoint(format!("file has {count} layers, model has {}", layers.len())));
    }
    for (i, l) in layers.iter().enumerate() {
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = read_u32(&mut input)? as usize;
        }
        if dims != l.kernel.dims() {
            return Err(Error::Checkpoint(format!("layer {i}: file shape {dims:?}, model {:?}", l.kernel.dims())));
        }
    }
    for l in layers.iter_mut() {
        for v in l.kernel.data_mut().iter_mut().chain(l.bias.iter_mut()) {
            let mut b = [0u8; 4];
            input.read_exact(&mut b)?;
            *v = T::cast(f32::from_le_bytes(b) as f64);
        }
        l.zero_grad();
        l.kernel_momentum.iter_mut().chain(l.bias_momentum.iter_mut()).for_each(|m| *m = T::zero());
    }
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

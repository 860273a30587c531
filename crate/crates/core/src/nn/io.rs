//! Binary network weight files.
//!
//! Layout (little endian): magic `DKNN`, version `u32`, layer count `u32`, then per
//! layer `in u32`, `out u32`, activation code `u32`, `out * in` row-major `f64`
//! weights followed by `out` `f64` biases.

use std::io::{Read, Write};

use super::matrix::Matrix;
use super::mlp::{Activation, Layer, Mlp};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DKNN";
pub const VERSION: u32 = 1;

pub fn write_mlp<T: Scalar, W: Write>(net: &Mlp<T>, mut w: W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        w.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        w.write_all(&layer.activation.code().to_le_bytes())?;
        for v in layer.weights.as_slice().iter().chain(&layer.biases) {
            w.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_mlp<T: Scalar, R: Read>(mut r: R) -> Result<Mlp<T>> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a DKNN weight file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported DKNN version {version}")));
    }
    let n_layers = read_u32(&mut r)? as usize;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = read_u32(&mut r)? as usize;
        let out_dim = read_u32(&mut r)? as usize;
        let code = read_u32(&mut r)?;
        let activation = Activation::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown activation code {code}")))?;
        let weights = read_f64s::<T, _>(&mut r, in_dim * out_dim)?;
        let biases = read_f64s::<T, _>(&mut r, out_dim)?;
        layers.push(Layer {
            weights: Matrix::from_vec(out_dim, in_dim, weights)?,
            biases,
            activation,
        });
    }
    Mlp::from_layers(layers)
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated file: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64s<T: Scalar, R: Read>(r: &mut R, n: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        read_exact(r, &mut b)?;
        out.push(T::lit(f64::from_le_bytes(b)));
    }
    Ok(out)
}

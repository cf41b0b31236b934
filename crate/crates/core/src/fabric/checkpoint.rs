//! Binary fabric checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CNFCKPT\0"
//! version      u32       currently 1
//! elem_bytes   u8        4 (f32) or 8 (f64)
//! dims         5 x u64   layers, scales, channels, resolution, classes
//! link_count   u64
//! alive        link_count bytes, 0 or 1
//! param_count  u64
//! per parameter, in construction order:
//!   rank       u8
//!   extents    rank x u64
//!   has_mask   u8
//!   values     n x elem
//!   mask       n bytes (0 or 1), only if has_mask
//! running stats, stem then each link in id order:
//!   mean       channels x elem
//!   var        channels x elem
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Fabric, FabricDims};
use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CNFCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(fabric: &Fabric<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    let d = fabric.dims;
    for v in [d.layers, d.scales, d.channels, d.resolution, d.classes] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&(fabric.links.len() as u64).to_le_bytes());
    out.extend(fabric.links.iter().map(|l| l.alive as u8));
    out.extend_from_slice(&(fabric.params.len() as u64).to_le_bytes());
    for (_, p) in fabric.params.iter() {
        let v = p.value();
        out.push(v.shape().len() as u8);
        for &e in v.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        out.push(p.mask().is_some() as u8);
        for &x in v.data() {
            x.write_le(&mut out);
        }
        if let Some(m) = p.mask() {
            out.extend(m.data().iter().map(|&x| (x != T::zero()) as u8));
        }
    }
    let mut put_stats = |s: &RunningStats<T>| {
        for &x in s.mean.data().iter().chain(s.var.data()) {
            x.write_le(&mut out);
        }
    };
    put_stats(&fabric.stem.stats);
    for l in &fabric.links {
        put_stats(&l.block.stats);
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} more bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<usize> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize)
    }

    fn elems<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let b = self.take(n * T::BYTES)?;
        Ok(b.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

/// Parses a checkpoint produced by [`write_checkpoint`]. `path` is used only
/// in error messages.
pub fn read_checkpoint<T: Scalar>(bytes: &[u8], path: &Path) -> Result<Fabric<T>> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        path,
    };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            detail: "bad magic".into(),
        });
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(r.err(format!("unsupported version {version}")));
    }
    let elem = r.u8()? as usize;
    if elem != T::BYTES {
        return Err(r.err(format!(
            "checkpoint stores {elem}-byte values, reader expects {}",
            T::BYTES
        )));
    }
    let dims = FabricDims {
        layers: r.u64()?,
        scales: r.u64()?,
        channels: r.u64()?,
        resolution: r.u64()?,
        classes: r.u64()?,
    };
    dims.validate().map_err(|e| r.err(e.to_string()))?;
    // Parameter values are overwritten below; the seed only fixes layout.
    let mut fabric = Fabric::<T>::new(dims, &mut ChaCha8Rng::seed_from_u64(0))?;
    let links = r.u64()?;
    if links != fabric.links.len() {
        return Err(r.err(format!("{links} links, dims imply {}", fabric.links.len())));
    }
    for link in &mut fabric.links {
        link.alive = match r.u8()? {
            0 => false,
            1 => true,
            x => return Err(r.err(format!("alive flag {x}"))),
        };
    }
    let nparams = r.u64()?;
    if nparams != fabric.params.len() {
        return Err(r.err(format!("{nparams} parameters, expected {}", fabric.params.len())));
    }
    let ids: Vec<_> = fabric.params.iter().map(|(id, _)| id).collect();
    for id in ids {
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let expected = fabric.params.get(id).value().shape().to_vec();
        if shape != expected {
            return Err(r.err(format!("parameter shape {shape:?}, expected {expected:?}")));
        }
        let has_mask = r.u8()? != 0;
        let n: usize = shape.iter().product();
        let values = Tensor::new(shape.clone(), r.elems::<T>(n)?)?;
        let p = fabric.params.get_mut(id);
        *p.value_mut() = values;
        if has_mask {
            let m = r.take(n)?;
            let mask = Tensor::new(
                shape,
                m.iter().map(|&b| if b != 0 { T::one() } else { T::zero() }).collect(),
            )?;
            p.set_mask(mask)?;
        }
    }
    let c = dims.channels;
    let read_stats = |r: &mut Reader| -> Result<RunningStats<T>> {
        Ok(RunningStats {
            mean: Tensor::new(vec![c], r.elems(c)?)?,
            var: Tensor::new(vec![c], r.elems(c)?)?,
        })
    };
    fabric.stem.stats = read_stats(&mut r)?;
    for i in 0..fabric.links.len() {
        fabric.links[i].block.stats = read_stats(&mut r)?;
    }
    if r.pos != bytes.len() {
        return Err(r.err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(fabric)
}

pub fn save_checkpoint<T: Scalar>(fabric: &Fabric<T>, path: &Path) -> Result<()> {
    fs::write(path, write_checkpoint(fabric))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Fabric<T>> {
    let bytes = fs::read(path)?;
    read_checkpoint(&bytes, path)
}

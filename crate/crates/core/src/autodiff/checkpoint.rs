//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "BWLCPRM\0"
//! version  u32      1
//! seed     u64      ParameterStore seed
//! count    u32      number of tensors
//! count × {
//!   name_len u32, name  UTF-8 bytes
//!   rank     u32, dims  rank × u64
//!   values   numel × f64
//! }
//! ```
//!
//! Tensors are written in name order, so equal stores produce identical files.

use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian, WriteBytesExt};

use crate::autodiff::store::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"BWLCPRM\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<S: Scalar, W: Write>(store: &ParameterStore<S>, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u64::<LittleEndian>(store.seed())?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for (name, t) in store.iter() {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &x in t.data() {
            w.write_f64::<LittleEndian>(x.as_f64())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                format: "checkpoint",
                offset: self.pos,
                detail: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4, what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8, what)?))
    }
}

pub fn read_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<ParameterStore<S>> {
    let mut r = Reader { bytes, pos: 0 };
    let bad = |offset, detail: String| Error::Format {
        format: "checkpoint",
        offset,
        detail,
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(bad(0, "bad magic".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(bad(8, format!("unsupported version {version}")));
    }
    let seed = r.u64("seed")?;
    let count = r.u32("tensor count")?;
    let mut store = ParameterStore::new(seed);
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|e| bad(at + 4, format!("name is not UTF-8: {e}")))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.saturating_mul(8), "values")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| S::lit(LittleEndian::read_f64(c)))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| bad(at, e.to_string()))?;
        store.insert(name, t).map_err(|e| bad(at, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(bad(r.pos, "trailing bytes".into()));
    }
    Ok(store)
}

pub fn save_checkpoint<S: Scalar>(store: &ParameterStore<S>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(store, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ParameterStore<S>> {
    read_checkpoint(&std::fs::read(path)?)
}

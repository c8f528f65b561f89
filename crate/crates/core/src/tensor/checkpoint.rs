//! `SDTK` tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SDTK"            4 bytes magic
//! version           u32 (currently 1)
//! count             u32
//! count × entry:    name_len u32, name (UTF-8), ndim u32, dims u64 × ndim,
//!                   offset u64  (byte offset of the entry's data, relative to
//!                                the start of the data section)
//! data section      f64 values, entries back to back in manifest order
//! ```

use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDTK";
pub const VERSION: u32 = 1;

pub fn encode(entries: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += 8 * t.numel() as u64;
    }
    for (_, t) in entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                offset: self.buf.len(),
                message: "unexpected end of tensor container".into(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "missing SDTK magic".into(),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported container version {version}"),
        });
    }
    let count = c.u32()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Parse {
                offset: at,
                message: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let ndim = c.u32()? as usize;
        let dims = (0..ndim)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = c.u64()? as usize;
        manifest.push((name, dims, offset));
    }
    let data_start = c.pos;
    manifest
        .into_iter()
        .map(|(name, dims, offset)| {
            let n: usize = dims.iter().product();
            let start = data_start + offset;
            let end = start + 8 * n;
            if end > buf.len() {
                return Err(Error::Parse {
                    offset: buf.len(),
                    message: format!("data for {name} runs past end of file"),
                });
            }
            let data = buf[start..end]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            Ok((name, Tensor::new(dims, data)?))
        })
        .collect()
}

pub fn encode_store(store: &ParamStore) -> Vec<u8> {
    let entries: Vec<(&str, &Tensor)> = store.ids().map(|id| (store.name(id), store.get(id))).collect();
    encode(&entries)
}

/// Loads values into an existing store; every stored parameter must be present
/// in the file with the same shape.
pub fn load_into(store: &mut ParamStore, buf: &[u8]) -> Result<()> {
    let tensors = decode(buf)?;
    let mut found = vec![false; store.len()];
    for (name, t) in tensors {
        if let Some(id) = store.id(&name) {
            let dst = store.get_mut(id);
            if dst.shape() != t.shape() {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    lhs: dst.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(t.data());
            found[id.index()] = true;
        }
    }
    if let Some(missing) = store.ids().find(|id| !found[id.index()]) {
        return Err(Error::data(format!(
            "checkpoint lacks parameter {}",
            store.name(missing)
        )));
    }
    Ok(())
}

pub fn save_store(store: &ParamStore, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_store(store))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trips() {
        let a = Tensor::matrix(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0]).unwrap();
        let b = Tensor::scalar(std::f64::consts::PI);
        let bytes = encode(&[("a", &a), ("layer.b", &b)]);
        assert_eq!(&bytes[..4], b"SDTK");
        let back = decode(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "a");
        assert_eq!(back[0].1.data(), a.data());
        assert_eq!(back[1].1.shape(), &[1]);
    }

    #[test]
    fn truncated_container_is_rejected() {
        let a = Tensor::matrix(2, 2, vec![1.0; 4]).unwrap();
        let bytes = encode(&[("a", &a)]);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode(b"XXXX").is_err());
    }
}

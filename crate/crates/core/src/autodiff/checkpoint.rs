//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes   "DAGOCKPT"
//! version   u32
//! meta      u32 length + UTF-8 bytes (free-form, usually JSON)
//! sections  u32 count, then per section:
//!   name      u32 length + UTF-8
//!   tensors   u32 count, then per tensor:
//!     name    u32 length + UTF-8
//!     rank    u32, then rank x u64 dims
//!     data    prod(dims) x f64
//! ```
//!
//! Every integer and float is little-endian.

use std::io::{Read, Write};

use super::{AdError, Tensor};

pub const MAGIC: &[u8; 8] = b"DAGOCKPT";
pub const VERSION: u32 = 1;

/// Named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorSet {
    pub entries: Vec<(String, Tensor)>,
}

impl TensorSet {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub sections: Vec<(String, TensorSet)>,
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&TensorSet> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, s)| s)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AdError> {
        Self::read(&mut &bytes[..])
    }

    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(w, &self.meta)?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, set) in &self.sections {
            write_str(w, name)?;
            w.write_all(&(set.entries.len() as u32).to_le_bytes())?;
            for (tname, t) in &set.entries {
                write_str(w, tname)?;
                w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
                for &d in t.shape() {
                    w.write_all(&(d as u64).to_le_bytes())?;
                }
                for &x in t.data() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self, AdError> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(AdError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(AdError::Checkpoint(format!("unsupported version {version}")));
        }
        let meta = read_str(r)?;
        let n_sections = read_u32(r)?;
        let mut sections = Vec::new();
        for _ in 0..n_sections {
            let name = read_str(r)?;
            let count = read_u32(r)?;
            let mut entries = Vec::new();
            for _ in 0..count {
                let tname = read_str(r)?;
                let rank = read_u32(r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    let mut b = [0u8; 8];
                    read_exact(r, &mut b)?;
                    shape.push(u64::from_le_bytes(b) as usize);
                }
                let numel: usize = shape.iter().product();
                let mut raw = vec![0u8; numel * 8];
                read_exact(r, &mut raw)?;
                let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                entries.push((tname, Tensor::new(&shape, data)?));
            }
            sections.push((name, TensorSet { entries }));
        }
        Ok(Checkpoint { meta, sections })
    }
}

fn write_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<(), AdError> {
    r.read_exact(buf).map_err(|e| AdError::Checkpoint(format!("truncated: {e}")))
}

fn read_u32(r: &mut impl Read) -> Result<u32, AdError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut impl Read) -> Result<String, AdError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|e| AdError::Checkpoint(format!("invalid utf-8: {e}")))
}

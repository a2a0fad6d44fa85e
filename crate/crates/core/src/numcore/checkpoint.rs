//! Flat container of named `f64` arrays.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "EXGT" | version: u32 | entry count: u32
//! per entry: name length: u32 | UTF-8 name | rank: u32 | dims: u64 × rank | f64 × Π dims
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::io_util;

pub const MAGIC: &[u8; 4] = b"EXGT";
pub const VERSION: u32 = 1;

/// Ordered list of named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Format(format!("checkpoint has no entry `{name}`")))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an EXGT container".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported EXGT version {version}")));
        }
        let count = read_u32(r)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            read_exact(r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("entry name is not UTF-8".into()))?;
            let rank = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(r)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            read_exact(r, &mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io_util::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    read_u64(r).map(f64::from_bits)
}

//! Named-tensor checkpoint files.
//!
//! Layout (little-endian): magic `AFDK`, `u32` version, `u32` entry count,
//! then per entry `[u16 name_len][name utf-8][u8 rank][u32 dims × rank]
//! [f32 values]`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, FormatKind, Result};

pub const MAGIC: &[u8; 4] = b"AFDK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

/// Ordered map from entry name to tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: BTreeMap<String, Entry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) {
        self.entries.insert(name.into(), Entry { dims, values });
    }

    pub fn insert_scalar(&mut self, name: impl Into<String>, v: f32) {
        self.insert(name, vec![1], vec![v]);
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::State(format!("checkpoint lacks entry `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f32> {
        match self.require(name)?.values.as_slice() {
            [v] => Ok(*v),
            other => Err(Error::State(format!(
                "entry `{name}` holds {} values, expected 1",
                other.len()
            ))),
        }
    }

    /// Entries under `prefix.`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> BTreeMap<String, Vec<f32>> {
        let p = format!("{prefix}.");
        self.entries
            .iter()
            .filter_map(|(k, e)| k.strip_prefix(&p).map(|s| (s.to_string(), e.values.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::Usage(format!("entry name too long: {name}")))?;
            let rank = u8::try_from(e.dims.len())
                .map_err(|_| Error::Usage(format!("rank of `{name}` exceeds 255")))?;
            if e.dims.iter().product::<usize>() != e.values.len() {
                return Err(Error::Usage(format!(
                    "entry `{name}`: dims {:?} for {} values",
                    e.dims,
                    e.values.len()
                )));
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in &e.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::format(FormatKind::BadMagic, 0, format!("magic {magic:?}")));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                FormatKind::BadValue,
                4,
                format!("unsupported version {version}"),
            ));
        }
        let count = r.u32()?;
        let mut ck = Checkpoint::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = usize::from(r.u16()?);
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::format(FormatKind::BadValue, at + 2, e.to_string()))?
                .to_string();
            let rank = usize::from(r.take(1)?[0]);
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| {
                Error::format(FormatKind::BadValue, r.pos as u64, "entry size overflows")
            })?)?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if ck.entries.insert(name.clone(), Entry { dims, values }).is_some() {
                return Err(Error::format(FormatKind::BadValue, at, format!("duplicate entry `{name}`")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::format(
                FormatKind::CountMismatch,
                r.pos as u64,
                format!("{} bytes after {count} entries", bytes.len() - r.pos),
            ));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                FormatKind::Truncated,
                self.pos as u64,
                format!("need {n} bytes, {} remain", self.bytes.len() - self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

//! Named-array container: a JSON header plus typed, shaped arrays.
//!
//! Layout (all integers little-endian), version 1:
//!
//! ```text
//! magic       8 bytes  "PIWNOARR"
//! version     u32
//! header_len  u32      followed by header_len bytes of UTF-8 JSON
//! n_records   u32
//! record*     name_len u16, name (UTF-8), dtype u8, ndim u8,
//!             dims u64 × ndim, data_len u64, data bytes
//! ```
//!
//! dtype 0 = f64, 1 = u64, 2 = u8. The same content always encodes to the
//! same bytes: records keep insertion order and the header is written by
//! serde_json with sorted object keys.

use std::path::Path;

use serde_json::Value;

use crate::error::{invalid, Error, Result};

pub const MAGIC: &[u8; 8] = b"PIWNOARR";
pub const VERSION: u32 = 1;

const MAX_HEADER: usize = 64 << 20;
const MAX_NAME: usize = 1024;
const MAX_NDIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
    U8(Vec<u8>),
}

impl ArrayData {
    fn dtype(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 0,
            ArrayData::U64(_) => 1,
            ArrayData::U8(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArrayFile {
    pub header: Value,
    pub arrays: Vec<NamedArray>,
}

impl Default for ArrayFile {
    fn default() -> Self {
        ArrayFile {
            header: Value::Object(Default::default()),
            arrays: Vec::new(),
        }
    }
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl ArrayFile {
    pub fn new(header: Value) -> Self {
        ArrayFile {
            header,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: ArrayData) -> Result<()> {
        if name.is_empty() || name.len() > MAX_NAME {
            return Err(invalid(format!("array name must be 1..={MAX_NAME} bytes")));
        }
        if self.arrays.iter().any(|a| a.name == name) {
            return Err(invalid(format!("duplicate array name {name:?}")));
        }
        if shape.len() > MAX_NDIM {
            return Err(invalid(format!("at most {MAX_NDIM} dimensions")));
        }
        if element_count(shape) != Some(data.len()) {
            return Err(invalid(format!("array {name:?}: shape {shape:?} does not match {} elements", data.len())));
        }
        self.arrays.push(NamedArray {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        self.push(name, shape, ArrayData::F64(data))
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn f64(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name) {
            Some(NamedArray {
                shape,
                data: ArrayData::F64(v),
                ..
            }) => Ok((shape, v)),
            Some(_) => Err(Error::Decode(format!("array {name:?} is not f64"))),
            None => Err(Error::Decode(format!("missing array {name:?}"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<(&[usize], &[u64])> {
        match self.get(name) {
            Some(NamedArray {
                shape,
                data: ArrayData::U64(v),
                ..
            }) => Ok((shape, v)),
            Some(_) => Err(Error::Decode(format!("array {name:?} is not u64"))),
            None => Err(Error::Decode(format!("missing array {name:?}"))),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::Internal(e.to_string()))?;
        if header.len() > MAX_HEADER {
            return Err(invalid("header too large"));
        }
        let mut out = Vec::with_capacity(64 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.dtype());
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &a.data {
                ArrayData::F64(v) => {
                    out.extend_from_slice(&((v.len() * 8) as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                ArrayData::U64(v) => {
                    out.extend_from_slice(&((v.len() * 8) as u64).to_le_bytes());
                    v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                ArrayData::U8(v) => {
                    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
                    out.extend_from_slice(v);
                }
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Decode("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Decode(format!("unsupported container version {version}")));
        }
        let header_len = r.u32()? as usize;
        if header_len > MAX_HEADER {
            return Err(Error::Decode("header too large".into()));
        }
        let header: Value =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| Error::Decode(format!("header: {e}")))?;
        let n = r.u32()? as usize;
        let mut file = ArrayFile::new(header);
        for i in 0..n {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Decode(format!("record {i}: name is not UTF-8")))?
                .to_string();
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            if ndim > MAX_NDIM {
                return Err(Error::Decode(format!("record {name:?}: {ndim} dimensions")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Decode("dimension overflows usize".into()))?);
            }
            let count = element_count(&shape).ok_or_else(|| Error::Decode(format!("record {name:?}: shape overflows")))?;
            let data_len = usize::try_from(r.u64()?).map_err(|_| Error::Decode("length overflows usize".into()))?;
            let width = match dtype {
                0 | 1 => 8,
                2 => 1,
                d => return Err(Error::Decode(format!("record {name:?}: unknown dtype {d}"))),
            };
            if count.checked_mul(width) != Some(data_len) {
                return Err(Error::Decode(format!("record {name:?}: {data_len} bytes for shape {shape:?}")));
            }
            let raw = r.take(data_len)?;
            let data = match dtype {
                0 => ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => ArrayData::U64(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()),
                _ => ArrayData::U8(raw.to_vec()),
            };
            file.push(&name, &shape, data).map_err(|e| Error::Decode(e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Decode(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(e) => {
                let s = &self.buf[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Decode(format!("truncated at byte {} (wanted {n} more)", self.pos))),
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

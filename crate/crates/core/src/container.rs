//! Binary array container used by every pipeline stage.
//!
//! Layout: 4-byte magic `OSMM`, u16 little-endian version, then one record
//! per named array: u16 name length + UTF-8 name, u8 dtype code, u8 ndim,
//! ndim u64 dims, row-major little-endian payload. Records repeat until EOF.
//! Writes are deterministic: arrays are stored in insertion order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::{Complex32, Complex64};

use crate::error::{OssiError, Result};

pub const MAGIC: [u8; 4] = *b"OSMM";
pub const VERSION: u16 = 1;

const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;
const DTYPE_C64: u8 = 3;
const DTYPE_C128: u8 = 4;
const DTYPE_U8: u8 = 5;

/// Typed payload of one container array.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    /// Complex stored as interleaved f32 pairs.
    C64(Vec<Complex32>),
    /// Complex stored as interleaved f64 pairs.
    C128(Vec<Complex64>),
    U8(Vec<u8>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::C64(v) => v.len(),
            ArrayData::C128(v) => v.len(),
            ArrayData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype_code(&self) -> u8 {
        match self {
            ArrayData::F32(_) => DTYPE_F32,
            ArrayData::F64(_) => DTYPE_F64,
            ArrayData::C64(_) => DTYPE_C64,
            ArrayData::C128(_) => DTYPE_C128,
            ArrayData::U8(_) => DTYPE_U8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayEntry {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: ArrayData,
}

/// Ordered collection of named arrays with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<ArrayEntry>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn entries(&self) -> &[ArrayEntry] {
        &self.entries
    }

    pub fn push(&mut self, name: &str, dims: &[u64], data: ArrayData) -> Result<()> {
        if self.entries.iter().any(|e| e.name == name) {
            return Err(OssiError::Format(format!("duplicate array name `{name}`")));
        }
        let expect: u64 = dims.iter().product();
        if expect != data.len() as u64 {
            return Err(OssiError::Format(format!(
                "array `{name}`: dims {:?} imply {} elements but payload has {}",
                dims,
                expect,
                data.len()
            )));
        }
        if name.len() > u16::MAX as usize {
            return Err(OssiError::Format(format!("array name `{name}` too long")));
        }
        self.entries.push(ArrayEntry { name: name.to_string(), dims: dims.to_vec(), data });
        Ok(())
    }

    pub fn push_f64(&mut self, name: &str, dims: &[u64], v: Vec<f64>) -> Result<()> {
        self.push(name, dims, ArrayData::F64(v))
    }

    pub fn push_c128(&mut self, name: &str, dims: &[u64], v: Vec<Complex64>) -> Result<()> {
        self.push(name, dims, ArrayData::C128(v))
    }

    pub fn push_u8(&mut self, name: &str, dims: &[u64], v: Vec<u8>) -> Result<()> {
        self.push(name, dims, ArrayData::U8(v))
    }

    pub fn get(&self, name: &str) -> Option<&ArrayEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&ArrayEntry> {
        self.get(name)
            .ok_or_else(|| OssiError::Format(format!("container is missing array `{name}`")))
    }

    pub fn f64_array(&self, name: &str) -> Result<(&[u64], &[f64])> {
        match self.require(name)? {
            ArrayEntry { dims, data: ArrayData::F64(v), .. } => Ok((dims, v)),
            e => Err(OssiError::Format(format!("array `{}` is not f64", e.name))),
        }
    }

    pub fn c128_array(&self, name: &str) -> Result<(&[u64], &[Complex64])> {
        match self.require(name)? {
            ArrayEntry { dims, data: ArrayData::C128(v), .. } => Ok((dims, v)),
            e => Err(OssiError::Format(format!("array `{}` is not c128", e.name))),
        }
    }

    pub fn u8_array(&self, name: &str) -> Result<(&[u64], &[u8])> {
        match self.require(name)? {
            ArrayEntry { dims, data: ArrayData::U8(v), .. } => Ok((dims, v)),
            e => Err(OssiError::Format(format!("array `{}` is not u8", e.name))),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u16).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[e.data.dtype_code(), e.dims.len() as u8])?;
            for d in &e.dims {
                w.write_all(&d.to_le_bytes())?;
            }
            write_payload(&mut w, &e.data)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(OssiError::Format(format!("bad magic {magic:?}")));
        }
        let mut ver = [0u8; 2];
        r.read_exact(&mut ver)?;
        let version = u16::from_le_bytes(ver);
        if version != VERSION {
            return Err(OssiError::Format(format!("unsupported container version {version}")));
        }
        let mut out = Container::new();
        loop {
            let mut len_buf = [0u8; 2];
            match r.read(&mut len_buf[..1])? {
                0 => break, // clean EOF at a record boundary
                _ => r.read_exact(&mut len_buf[1..])?,
            }
            let name_len = u16::from_le_bytes(len_buf) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)?;
            let name = String::from_utf8(name_buf)
                .map_err(|e| OssiError::Format(format!("array name is not UTF-8: {e}")))?;
            let mut head = [0u8; 2];
            r.read_exact(&mut head)?;
            let (dtype, ndim) = (head[0], head[1] as usize);
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                dims.push(u64::from_le_bytes(b));
            }
            let count = dims.iter().product::<u64>() as usize;
            let data = read_payload(&mut r, dtype, count, &name)?;
            out.push(&name, &dims, data)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path)?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path)?;
        Container::read_from(BufReader::new(f))
    }
}

fn write_payload<W: Write>(w: &mut W, data: &ArrayData) -> Result<()> {
    match data {
        ArrayData::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        ArrayData::F64(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        ArrayData::C64(v) => {
            for x in v {
                w.write_all(&x.re.to_le_bytes())?;
                w.write_all(&x.im.to_le_bytes())?;
            }
        }
        ArrayData::C128(v) => {
            for x in v {
                w.write_all(&x.re.to_le_bytes())?;
                w.write_all(&x.im.to_le_bytes())?;
            }
        }
        ArrayData::U8(v) => w.write_all(v)?,
    }
    Ok(())
}

fn read_payload<R: Read>(r: &mut R, dtype: u8, count: usize, name: &str) -> Result<ArrayData> {
    let elem = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        DTYPE_C64 => 8,
        DTYPE_C128 => 16,
        DTYPE_U8 => 1,
        other => {
            return Err(OssiError::Format(format!("array `{name}`: unknown dtype code {other}")))
        }
    };
    let mut raw = vec![0u8; count * elem];
    r.read_exact(&mut raw)
        .map_err(|e| OssiError::Format(format!("array `{name}`: truncated payload ({e})")))?;
    let data = match dtype {
        DTYPE_F32 => ArrayData::F32(
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DTYPE_F64 => ArrayData::F64(
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ),
        DTYPE_C64 => ArrayData::C64(
            raw.chunks_exact(8)
                .map(|c| {
                    Complex32::new(
                        f32::from_le_bytes(c[..4].try_into().unwrap()),
                        f32::from_le_bytes(c[4..].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
        DTYPE_C128 => ArrayData::C128(
            raw.chunks_exact(16)
                .map(|c| {
                    Complex64::new(
                        f64::from_le_bytes(c[..8].try_into().unwrap()),
                        f64::from_le_bytes(c[8..].try_into().unwrap()),
                    )
                })
                .collect(),
        ),
        DTYPE_U8 => ArrayData::U8(raw),
        _ => unreachable!(),
    };
    Ok(data)
}

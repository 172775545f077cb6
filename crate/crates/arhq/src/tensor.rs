//! Minimal little-endian tensor container.
//!
//! Single tensor: `"ARHQT1"`, dtype code (0 = f32, 1 = f64), ndim, `ndim`
//! u64 extents, then the row-major payload. An archive is `"ARHQA1"`, a u32
//! entry count, and per entry a u16 name length, the UTF-8 name and an
//! embedded single-tensor record.

use std::fs;
use std::path::Path;

use arhq_core::{Error, Matrix};

use crate::error::{IoError, Result};

pub const TENSOR_MAGIC: &[u8; 6] = b"ARHQT1";
pub const ARCHIVE_MAGIC: &[u8; 6] = b"ARHQA1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

fn empty_tensor() -> IoError {
    IoError::Core(Error::param("shape", "empty tensors are not allowed"))
}

/// Appends one single-tensor record. Values must survive the cast to `dtype`.
pub fn encode_tensor(m: &Matrix, dtype: Dtype, out: &mut Vec<u8>) -> Result<()> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(empty_tensor());
    }
    out.reserve(24 + m.as_slice().len() * dtype.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(dtype.code());
    out.push(2);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for (k, &v) in m.as_slice().iter().enumerate() {
        match dtype {
            Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            Dtype::F32 => {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(IoError::Core(Error::NonFinite {
                        row: k / m.cols(),
                        col: k % m.cols(),
                    }));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

type Decoded<T> = std::result::Result<T, (u64, String)>;

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Decoded<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                (
                    self.pos as u64,
                    format!(
                        "truncated {what}: need {n} bytes, {} left",
                        self.bytes.len() - self.pos
                    ),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Decoded<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Decoded<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Decoded<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Decoded<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expect: &[u8; 6]) -> Decoded<()> {
        let at = self.pos as u64;
        let got = self.take(6, "magic")?;
        if got != expect {
            return Err((
                at,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expect)
                ),
            ));
        }
        Ok(())
    }

    fn tensor(&mut self) -> Decoded<(Matrix, Dtype)> {
        self.magic(TENSOR_MAGIC)?;
        let at = self.pos as u64;
        let code = self.u8("dtype")?;
        let dtype = Dtype::from_code(code).ok_or((at, format!("unknown dtype code {code}")))?;
        let at = self.pos as u64;
        let ndim = self.u8("ndim")?;
        if !(1..=2).contains(&ndim) {
            return Err((at, format!("ndim {ndim} unsupported, expected 1 or 2")));
        }
        let mut shape = [1usize; 2];
        for d in shape.iter_mut().take(ndim as usize) {
            let at = self.pos as u64;
            let e = self.u64("shape")?;
            *d = usize::try_from(e).map_err(|_| (at, format!("extent {e} too large")))?;
            if *d == 0 {
                return Err((at, String::from("zero extent: empty tensors are not allowed")));
            }
        }
        let [rows, cols] = shape;
        let at = self.pos as u64;
        let len = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(dtype.size()).is_some())
            .ok_or((at, String::from("shape overflows the address space")))?;
        let payload = self.take(len * dtype.size(), "payload")?;
        let mut data = Vec::with_capacity(len);
        for (k, chunk) in payload.chunks_exact(dtype.size()).enumerate() {
            let v = match dtype {
                Dtype::F64 => f64::from_le_bytes(chunk.try_into().unwrap()),
                Dtype::F32 => f32::from_le_bytes(chunk.try_into().unwrap()) as f64,
            };
            if !v.is_finite() {
                return Err((at + (k * dtype.size()) as u64, format!("non-finite value {v}")));
            }
            data.push(v);
        }
        let m = Matrix::new(rows, cols, data).map_err(|e| (at, e.to_string()))?;
        Ok((m, dtype))
    }

    fn finish(&self) -> Decoded<()> {
        if self.pos != self.bytes.len() {
            return Err((
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn format_error(path: &Path) -> impl Fn((u64, String)) -> IoError + '_ {
    move |(offset, reason)| IoError::Format {
        path: path.to_path_buf(),
        offset,
        reason,
    }
}

/// Decodes one single-tensor record that must span all of `bytes`.
/// One-dimensional tensors come back as a column.
pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<(Matrix, Dtype)> {
    let mut c = Cursor { bytes, pos: 0 };
    let out = c.tensor().map_err(format_error(path))?;
    c.finish().map_err(format_error(path))?;
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| IoError::io(path, e))
}

/// Saves as f64.
pub fn save_tensor(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    save_tensor_as(m, path, Dtype::F64)
}

pub fn save_tensor_as(m: &Matrix, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(m, dtype, &mut buf)?;
    write(path.as_ref(), &buf)
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Matrix> {
    load_tensor_with_dtype(path).map(|(m, _)| m)
}

pub fn load_tensor_with_dtype(path: impl AsRef<Path>) -> Result<(Matrix, Dtype)> {
    let path = path.as_ref();
    decode_tensor(&read(path)?, path)
}

/// Fails with a format error unless the stored dtype is `dtype`.
pub fn load_tensor_expect(path: impl AsRef<Path>, dtype: Dtype) -> Result<Matrix> {
    let path = path.as_ref();
    let (m, got) = load_tensor_with_dtype(path)?;
    if got != dtype {
        return Err(IoError::Format {
            path: path.to_path_buf(),
            offset: 6,
            reason: format!("dtype mismatch: stored {got:?}, expected {dtype:?}"),
        });
    }
    Ok(m)
}

pub fn save_archive(entries: &[(&str, &Matrix)], path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let count = u32::try_from(entries.len())
        .map_err(|_| IoError::Core(Error::param("entries", "too many archive entries")))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(ARCHIVE_MAGIC);
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, m) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| IoError::Core(Error::param("name", "archive entry name too long")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_tensor(m, dtype, &mut buf)?;
    }
    write(path, &buf)
}

/// Entries in stored order.
pub fn load_archive(path: impl AsRef<Path>) -> Result<Vec<(String, Matrix)>> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    let decode = |c: &mut Cursor| -> Decoded<Vec<(String, Matrix)>> {
        c.magic(ARCHIVE_MAGIC)?;
        let count = c.u32("entry count")?;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = c.u16("name length")? as usize;
            let at = c.pos as u64;
            let name = std::str::from_utf8(c.take(len, "name")?)
                .map_err(|_| (at, String::from("entry name is not UTF-8")))?
                .to_owned();
            let (m, _) = c.tensor()?;
            out.push((name, m));
        }
        c.finish()?;
        Ok(out)
    };
    decode(&mut c).map_err(format_error(path))
}

/// Looks up `name` in a loaded archive.
pub fn archive_entry<'a>(entries: &'a [(String, Matrix)], name: &str, path: &Path) -> Result<&'a Matrix> {
    entries
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, m)| m)
        .ok_or_else(|| IoError::Format {
            path: path.to_path_buf(),
            offset: 0,
            reason: format!("archive has no entry named {name:?}"),
        })
}

//! TNSR binary tensor container.
//!
//! One tensor record, all integers little-endian:
//!
//! | bytes        | field                                  |
//! |--------------|----------------------------------------|
//! | 4            | magic `TNSR`                           |
//! | 2            | version, `u16` (currently 1)           |
//! | 1            | dtype code, `u8` (0 = f32)             |
//! | 1            | rank, `u8`                             |
//! | 4 * rank     | extents, `u32` each                    |
//! | 4 * product  | payload, row-major `f32`               |
//!
//! A parameter tree is a sequence of `(u32 name length, UTF-8 name, record)`
//! entries running to the end of the file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"TNSR";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 0;

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.reserve(4 * t.len());
    for &v in t.data() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

pub fn encode_tree(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut out);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Tnsr {
            offset,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let start = self.pos;
        if self.take(4, "magic")? != MAGIC {
            return Err(self.err(start, "bad magic, expected \"TNSR\""));
        }
        let at = self.pos;
        let version = u16::from_le_bytes(self.take(2, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(self.err(at, format!("unsupported version {version}")));
        }
        let at = self.pos;
        let dtype = self.take(1, "dtype")?[0];
        if dtype != DTYPE_F32 {
            return Err(self.err(at, format!("unsupported dtype code {dtype}")));
        }
        let at = self.pos;
        let rank = self.take(1, "rank")?[0] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(self.err(at, format!("rank {rank} outside 1..={MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = self.pos;
            let e = self.u32("extent")? as usize;
            if e == 0 {
                return Err(self.err(at, "zero extent"));
            }
            shape.push(e);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| self.err(self.pos, "payload size overflows"))?;
        let payload = self.take(count, "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_bits(u32::from_le_bytes(b.try_into().unwrap())))
            .collect();
        Tensor::from_vec(&shape, data).map_err(|e| self.err(start, e.to_string()))
    }
}

/// Decodes exactly one tensor record; trailing bytes are an error.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    let t = r.tensor()?;
    if r.pos != bytes.len() {
        return Err(r.err(r.pos, "trailing bytes after tensor record"));
    }
    Ok(t)
}

pub fn decode_tree(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("name length")? as usize;
        let at = r.pos;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.err(at, "name is not valid UTF-8"))?
            .to_string();
        out.push((name, r.tensor()?));
    }
    Ok(out)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    Ok(fs::write(path, buf)?)
}

pub fn read_tree(path: impl AsRef<Path>) -> Result<Vec<(String, Tensor)>> {
    decode_tree(&fs::read(path)?)
}

pub fn write_tree(path: impl AsRef<Path>, entries: &[(String, Tensor)]) -> Result<()> {
    Ok(fs::write(path, encode_tree(entries))?)
}

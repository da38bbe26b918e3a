//! Little-endian binary encoding shared by checkpoints and dataset caches.
//!
//! Arrays are written as `u32 rank, u64 dims[rank], f64 values[Π dims]`.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

/// Open `path` for buffered reading; errors name the path.
pub fn open(path: &std::path::Path) -> Result<std::io::BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Wraps a reader and tracks the byte offset for error messages.
pub struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse { offset: self.offset, message: message.into() }
    }

    fn eof<T>(&self, what: &str, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => self.error(format!("truncated while reading {what}")),
            _ => Error::Io(e),
        })
    }

    pub fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        let r = self.inner.read_exact(&mut buf);
        self.eof(what, r)?;
        self.offset += n as u64;
        Ok(buf)
    }

    /// Reads up to `n` bytes, returning fewer only at end of input.
    pub fn bytes_up_to(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(n.min(1 << 24));
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        self.offset += buf.len() as u64;
        Ok(buf)
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        let r = self.inner.read_u8();
        let v = self.eof(what, r)?;
        self.offset += 1;
        Ok(v)
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let r = self.inner.read_u32::<LittleEndian>();
        let v = self.eof(what, r)?;
        self.offset += 4;
        Ok(v)
    }

    pub fn u32_be(&mut self, what: &str) -> Result<u32> {
        let r = self.inner.read_u32::<byteorder::BigEndian>();
        let v = self.eof(what, r)?;
        self.offset += 4;
        Ok(v)
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        let r = self.inner.read_u64::<LittleEndian>();
        let v = self.eof(what, r)?;
        self.offset += 8;
        Ok(v)
    }

    pub fn f64(&mut self, what: &str) -> Result<f64> {
        let r = self.inner.read_f64::<LittleEndian>();
        let v = self.eof(what, r)?;
        self.offset += 8;
        Ok(v)
    }

    /// Reads a length-prefixed `f64` vector, refusing lengths above `max`.
    pub fn f64_vec(&mut self, max: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.offset;
        let n = self.u64(what)?;
        if n > max as u64 {
            return Err(Error::Parse { offset: at, message: format!("{what}: length {n} exceeds {max}") });
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    /// Reads an array written by [`write_array`].
    pub fn array(&mut self, what: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let at = self.offset;
        let rank = self.u32(what)?;
        if rank > 8 {
            return Err(Error::Parse { offset: at, message: format!("{what}: rank {rank} too large") });
        }
        let dims = (0..rank).map(|_| self.u64(what).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d));
        let count = count
            .filter(|c| *c <= 1 << 32)
            .ok_or_else(|| Error::Parse { offset: at, message: format!("{what}: dims {dims:?} too large") })?;
        let values = (0..count).map(|_| self.f64(what)).collect::<Result<Vec<_>>>()?;
        Ok((dims, values))
    }
}

pub fn write_u8(w: &mut impl Write, v: u8) -> Result<()> {
    Ok(w.write_u8(v)?)
}

pub fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_u32::<LittleEndian>(v)?)
}

pub fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_u64::<LittleEndian>(v)?)
}

pub fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_f64::<LittleEndian>(v)?)
}

pub fn write_f64_vec(w: &mut impl Write, v: &[f64]) -> Result<()> {
    write_u64(w, v.len() as u64)?;
    v.iter().try_for_each(|x| write_f64(w, *x))
}

/// Writes an n-dimensional `f64` array.
pub fn write_array(w: &mut impl Write, dims: &[usize], values: &[f64]) -> Result<()> {
    let count: usize = dims.iter().product();
    if count != values.len() {
        return Err(Error::shape(count, values.len()));
    }
    write_u32(w, dims.len() as u32)?;
    dims.iter().try_for_each(|d| write_u64(w, *d as u64))?;
    values.iter().try_for_each(|x| write_f64(w, *x))
}

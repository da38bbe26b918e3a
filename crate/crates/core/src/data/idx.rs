//! IDX container format (the MNIST distribution format).
//!
//! Big-endian: a 4-byte magic `0x00 0x00 type ndims`, then `ndims` u32
//! dimension sizes, then the payload. Only unsigned-byte payloads are
//! supported: magic `0x00000801` (labels, 1-D) and `0x00000803` (images, 3-D).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::Dataset;
use crate::codec::OffsetReader;
use crate::error::{Error, Result};
use crate::flow::Shape;

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Raw unsigned-byte IDX contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }
}

pub fn read_idx(reader: impl Read) -> Result<IdxArray> {
    let mut r = OffsetReader::new(reader);
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC && magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: format!("bad IDX magic 0x{magic:08x}; expected 0x00000801 or 0x00000803"),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let at = r.offset();
        let d = r.u32_be("dimension size")? as usize;
        if d == 0 {
            return Err(Error::Parse { offset: at, message: "zero dimension size".into() });
        }
        dims.push(d);
    }
    let count = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).filter(|c| *c <= 1 << 34);
    let count = count.ok_or_else(|| r.error(format!("dimensions {dims:?} too large")))?;
    let data = r.bytes_up_to(count)?;
    if data.len() < count {
        return Err(r.error(format!("truncated payload: expected {count} bytes, found {}", data.len())));
    }
    Ok(IdxArray { dims, data })
}

pub fn write_idx(w: &mut impl Write, arr: &IdxArray) -> Result<()> {
    if arr.dims.len() != 1 && arr.dims.len() != 3 {
        return Err(Error::shape("1 or 3 dimensions", arr.dims.len()));
    }
    if arr.dims.iter().product::<usize>() != arr.data.len() {
        return Err(Error::shape(arr.dims.iter().product::<usize>(), arr.data.len()));
    }
    w.write_all(&arr.magic().to_be_bytes())?;
    for d in &arr.dims {
        w.write_all(&(*d as u32).to_be_bytes())?;
    }
    w.write_all(&arr.data)?;
    Ok(())
}

/// Load an IDX file as a dataset of byte values `0..=255`.
///
/// Image files become `N` rows of shape `1 × H × W`; label files become `N`
/// rows of dimension 1.
pub fn load_idx(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let arr = read_idx(crate::codec::open(path)?)?;
    let shape = match arr.dims.as_slice() {
        [_, h, w] => Shape::image(1, *h, *w),
        _ => Shape::flat(1),
    };
    let x = arr.data.iter().map(|b| f64::from(*b)).collect();
    let mut ds = Dataset::new(x, shape, format!("idx:{}", path.display()))?;
    ds.meta.bits = Some(8);
    Ok(ds)
}

/// Write image rows (integer values in `0..=255`) as an IDX image file.
pub fn save_idx_images(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let data = ds
        .x
        .iter()
        .map(|v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(v) {
                Ok(*v as u8)
            } else {
                Err(Error::domain(format!("IDX bytes must be integers in 0..=255, got {v}")))
            }
        })
        .collect::<Result<Vec<u8>>>()?;
    let arr = IdxArray { dims: vec![ds.len(), ds.shape.height, ds.shape.width], data };
    let mut w = BufWriter::new(File::create(path)?);
    write_idx(&mut w, &arr)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> IdxArray {
        IdxArray { dims: vec![4, 3, 2], data: (0..24).map(|i| (i * 10) as u8).collect() }
    }

    #[test]
    fn roundtrip_bitwise() {
        let mut bytes = Vec::new();
        write_idx(&mut bytes, &fixture()).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(bytes.len(), 4 + 12 + 24);
        let back = read_idx(&bytes[..]).unwrap();
        assert_eq!(back, fixture());
        let mut again = Vec::new();
        write_idx(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn truncation_reports_offset() {
        let mut bytes = Vec::new();
        write_idx(&mut bytes, &fixture()).unwrap();
        match read_idx(&bytes[..30]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 30),
            other => panic!("{other:?}"),
        }
        match read_idx(&bytes[..10]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_magic() {
        let bytes = [0u8, 0, 0x0d, 3, 0, 0, 0, 1];
        assert!(matches!(read_idx(&bytes[..]), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn labels() {
        let arr = IdxArray { dims: vec![3], data: vec![7, 1, 9] };
        let mut bytes = Vec::new();
        write_idx(&mut bytes, &arr).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 1]);
        assert_eq!(read_idx(&bytes[..]).unwrap(), arr);
    }
}

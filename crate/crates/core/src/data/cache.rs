//! Binary cache for prepared datasets (after splitting, contamination and
//! dequantization), so repeated runs read exactly the same rows.
//!
//! ```text
//! magic         8 bytes  "FFDATA\0\0"
//! version       u32      1
//! shape         u32 × 3
//! x             array (rank 2: n × dim)
//! splits        3 × (u64 count, u64 × count)   train, val, test
//! contaminated  u8 × n
//! source        u64 len, utf-8 bytes
//! dequantized   u8
//! bits          u32 (0 = unknown)
//! downsampled   u32 × 2 (0 0 = not downsampled)
//! replaced      u64 count, then (u64 row, f64 vec) each
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{Dataset, DatasetMeta, Splits};
use crate::codec::{write_array, write_f64_vec, write_u32, write_u64, write_u8, OffsetReader};
use crate::error::{Error, Result};
use crate::flow::Shape;

const MAGIC: &[u8; 8] = b"FFDATA\0\0";
const FORMAT_VERSION: u32 = 1;

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    for v in [ds.shape.channels, ds.shape.height, ds.shape.width] {
        write_u32(w, v as u32)?;
    }
    write_array(w, &[ds.len(), ds.dim()], &ds.x)?;
    for split in [&ds.splits.train, &ds.splits.val, &ds.splits.test] {
        write_u64(w, split.len() as u64)?;
        split.iter().try_for_each(|i| write_u64(w, *i as u64))?;
    }
    ds.contaminated.iter().try_for_each(|c| write_u8(w, *c as u8))?;
    let m = &ds.meta;
    write_u64(w, m.source.len() as u64)?;
    w.write_all(m.source.as_bytes())?;
    write_u8(w, m.dequantized as u8)?;
    write_u32(w, m.bits.unwrap_or(0))?;
    let (dh, dw) = m.downsampled_to.unwrap_or((0, 0));
    write_u32(w, dh as u32)?;
    write_u32(w, dw as u32)?;
    write_u64(w, m.replaced.len() as u64)?;
    for (row, orig) in &m.replaced {
        write_u64(w, *row as u64)?;
        write_f64_vec(w, orig)?;
    }
    Ok(())
}

fn read_indices<R: Read>(r: &mut OffsetReader<R>, n: usize) -> Result<Vec<usize>> {
    let at = r.offset();
    let count = r.u64("split length")? as usize;
    if count > n {
        return Err(Error::Parse { offset: at, message: format!("split of {count} rows exceeds {n}") });
    }
    (0..count)
        .map(|_| {
            let at = r.offset();
            let i = r.u64("split index")? as usize;
            if i >= n {
                return Err(Error::Parse { offset: at, message: format!("row index {i} out of range") });
            }
            Ok(i)
        })
        .collect()
}

pub fn read_dataset(reader: impl Read) -> Result<Dataset> {
    let mut r = OffsetReader::new(reader);
    if r.bytes(8, "magic")? != MAGIC {
        return Err(Error::Parse { offset: 0, message: "not a fatflow dataset cache (bad magic)".into() });
    }
    let at = r.offset();
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse { offset: at, message: format!("unsupported format version {version}") });
    }
    let c = r.u32("shape")? as usize;
    let h = r.u32("shape")? as usize;
    let w = r.u32("shape")? as usize;
    let shape = Shape::image(c, h, w);
    let at = r.offset();
    let (dims, x) = r.array("rows")?;
    if dims.len() != 2 || dims[1] != shape.len() || shape.len() == 0 {
        return Err(Error::Parse { offset: at, message: format!("row array {dims:?} does not match shape") });
    }
    let n = dims[0];
    let splits = Splits {
        train: read_indices(&mut r, n)?,
        val: read_indices(&mut r, n)?,
        test: read_indices(&mut r, n)?,
    };
    let mut seen = vec![false; n];
    for &i in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        if std::mem::replace(&mut seen[i], true) {
            return Err(r.error(format!("row {i} appears in more than one split")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(r.error("splits do not cover every row"));
    }
    let contaminated = (0..n).map(|_| r.u8("contaminated flag").map(|b| b != 0)).collect::<Result<Vec<_>>>()?;
    let at = r.offset();
    let len = r.u64("source length")? as usize;
    if len > 1 << 20 {
        return Err(Error::Parse { offset: at, message: format!("source length {len} too large") });
    }
    let source = String::from_utf8(r.bytes(len, "source")?)
        .map_err(|_| Error::Parse { offset: at, message: "source is not utf-8".into() })?;
    let dequantized = r.u8("dequantized flag")? != 0;
    let bits = Some(r.u32("bits")?).filter(|b| *b != 0);
    let dh = r.u32("downsampled height")? as usize;
    let dw = r.u32("downsampled width")? as usize;
    let downsampled_to = if dh == 0 && dw == 0 { None } else { Some((dh, dw)) };
    let at = r.offset();
    let count = r.u64("replaced count")? as usize;
    if count > n {
        return Err(Error::Parse { offset: at, message: format!("{count} replaced rows exceeds {n}") });
    }
    let replaced = (0..count)
        .map(|_| Ok((r.u64("replaced row")? as usize, r.f64_vec(shape.len(), "replaced values")?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        x,
        shape,
        splits,
        contaminated,
        meta: DatasetMeta { source, dequantized, bits, downsampled_to, replaced },
    })
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(crate::codec::open(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_two_moons, inject_outliers, split_dataset, OutlierKind, SplitName};
    use crate::rng::RngState;

    #[test]
    fn roundtrip_is_bitwise() {
        let mut rng = RngState::new(4);
        let ds = gen_two_moons(200, 0.1, &mut rng).unwrap();
        let ds = split_dataset(&ds, (0.6, 0.2, 0.2), &mut rng).unwrap();
        let ds = inject_outliers(&ds, 0.05, &OutlierKind::UniformBox { scale: 10.0 }, &[SplitName::Train], &mut rng)
            .unwrap();
        let mut bytes = Vec::new();
        write_dataset(&mut bytes, &ds).unwrap();
        let back = read_dataset(&bytes[..]).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_dataset(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_dataset(&bytes[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
    }
}

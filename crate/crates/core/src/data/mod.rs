//! Datasets: synthetic 2-D densities, outlier injection, IDX images,
//! uniform dequantization and deterministic splits.

mod cache;
mod idx;
mod synthetic;

use serde::{Deserialize, Serialize};

pub use cache::{load_dataset, read_dataset, save_dataset, write_dataset};
pub use idx::{load_idx, read_idx, save_idx_images, write_idx, IdxArray};
pub use synthetic::{gen_rings, gen_two_moons};

use crate::error::{Error, Result};
use crate::flow::Shape;
use crate::rng::RngState;

/// Which part of a split a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

/// Row indices of each split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn get(&self, name: SplitName) -> &[usize] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Provenance of a dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetMeta {
    pub source: String,
    pub dequantized: bool,
    /// Bits per value of the original integer data, when known.
    pub bits: Option<u32>,
    /// Output size of image downsampling, if applied.
    pub downsampled_to: Option<(usize, usize)>,
    /// Rows overwritten by outlier injection, with their original values.
    pub replaced: Vec<(usize, Vec<f64>)>,
}

/// `n` observations of shape `shape`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub shape: Shape,
    pub splits: Splits,
    /// `true` for rows replaced by injected outliers.
    pub contaminated: Vec<bool>,
    pub meta: DatasetMeta,
}

impl Dataset {
    /// Wrap `x` (`n × shape.len()`); every row starts in the training split.
    pub fn new(x: Vec<f64>, shape: Shape, source: impl Into<String>) -> Result<Self> {
        let d = shape.len();
        if d == 0 || x.len() % d != 0 {
            return Err(Error::shape(format!("multiple of {d}"), x.len()));
        }
        let n = x.len() / d;
        Ok(Self {
            x,
            shape,
            splits: Splits { train: (0..n).collect(), ..Default::default() },
            contaminated: vec![false; n],
            meta: DatasetMeta { source: source.into(), ..Default::default() },
        })
    }

    pub fn len(&self) -> usize {
        self.contaminated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.x[i * d..(i + 1) * d]
    }

    /// Rows `idx` gathered into a contiguous buffer.
    pub fn gather(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.dim());
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn split_rows(&self, name: SplitName) -> Vec<f64> {
        self.gather(self.splits.get(name))
    }

    pub fn contaminated_count(&self) -> usize {
        self.contaminated.iter().filter(|c| **c).count()
    }

    /// Shift and scale every dimension to zero mean, unit (population) variance.
    pub fn standardize(&mut self) {
        let d = self.dim();
        let n = self.len() as f64;
        for j in 0..d {
            let mean = self.x.iter().skip(j).step_by(d).sum::<f64>() / n;
            let var = self.x.iter().skip(j).step_by(d).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 0.0 {
                for v in self.x.iter_mut().skip(j).step_by(d) {
                    *v = (*v - mean) / sd;
                }
            }
        }
    }

    /// Component-wise bounding box `(min, max)` of the rows in `idx`.
    pub fn bounds(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for &i in idx {
            for (j, v) in self.row(i).iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        (lo, hi)
    }
}

/// Source of injected outliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutlierKind {
    /// Each coordinate uniform on `[-scale, scale)`.
    UniformBox { scale: f64 },
    /// Gaussian cluster `offset + sd · N(0, I)`.
    ShiftedCluster { offset: Vec<f64>, sd: f64 },
    /// Rows drawn (with replacement) from another dataset of dimension `dim`.
    ForeignDataset { rows: Vec<f64>, dim: usize },
}

/// Replace `⌈p · |split|⌉` rows of each target split with outliers.
///
/// Rows are chosen uniformly without replacement within each split. The
/// contamination mask is updated and original values are kept in
/// `meta.replaced`.
pub fn inject_outliers(
    ds: &Dataset,
    fraction: f64,
    kind: &OutlierKind,
    targets: &[SplitName],
    rng: &mut RngState,
) -> Result<Dataset> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::domain(format!("outlier fraction must be in [0, 0.5], got {fraction}")));
    }
    let d = ds.dim();
    match kind {
        OutlierKind::UniformBox { scale } if !(*scale > 0.0) => {
            return Err(Error::domain("uniform box scale must be > 0"));
        }
        OutlierKind::ShiftedCluster { offset, .. } if offset.len() != d => {
            return Err(Error::shape(format!("offset of length {d}"), offset.len()));
        }
        OutlierKind::ForeignDataset { rows, dim } if *dim != d || rows.is_empty() || rows.len() % d != 0 => {
            return Err(Error::shape(format!("foreign rows of dimension {d}"), format!("dimension {dim}")));
        }
        _ => {}
    }
    let mut out = ds.clone();
    if fraction == 0.0 {
        return Ok(out);
    }
    for &target in targets {
        let mut pool = ds.splits.get(target).to_vec();
        let count = outlier_count(fraction, pool.len());
        // partial Fisher–Yates: the first `count` entries are the chosen rows
        for i in 0..count {
            let j = i + rng.below(pool.len() - i);
            pool.swap(i, j);
        }
        for &row in &pool[..count] {
            let original = out.row(row).to_vec();
            let fresh: Vec<f64> = match kind {
                OutlierKind::UniformBox { scale } => (0..d).map(|_| rng.uniform_range(-scale, *scale)).collect(),
                OutlierKind::ShiftedCluster { offset, sd } => offset.iter().map(|o| o + sd * rng.normal()).collect(),
                OutlierKind::ForeignDataset { rows, .. } => {
                    let k = rng.below(rows.len() / d);
                    rows[k * d..(k + 1) * d].to_vec()
                }
            };
            out.x[row * d..(row + 1) * d].copy_from_slice(&fresh);
            out.contaminated[row] = true;
            out.meta.replaced.push((row, original));
        }
    }
    Ok(out)
}

/// `⌈p · n⌉`, robust to representation error in `p · n`.
pub fn outlier_count(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    let rounded = exact.round();
    let c = if (exact - rounded).abs() < 1e-9 { rounded } else { exact.ceil() };
    (c as usize).min(n)
}

/// Shuffle rows deterministically and split them by `fractions`
/// (train, val, test). Sizes are `round(f·N)` for train and val, with the
/// remainder going to test.
pub fn split_dataset(ds: &Dataset, fractions: (f64, f64, f64), rng: &mut RngState) -> Result<Dataset> {
    let (a, b, c) = fractions;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("split fractions must be >= 0 and sum to 1, got {fractions:?}")));
    }
    let n = ds.len();
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_val = ((b * n as f64).round() as usize).min(n - n_train);
    let mut out = ds.clone();
    out.splits = Splits {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    };
    Ok(out)
}

/// Uniform dequantization: `x' = (x + u) / 2^bits` with `u ~ U[0, 1)`.
///
/// Input must be integer-valued in `[0, 2^bits)`. NLLs of the result are in
/// the `[0, 1)` space; reporting in bits per dimension adds back
/// `bits` (see [`crate::trainer::Units`]).
pub fn dequantize(ds: &Dataset, bits: u32, rng: &mut RngState) -> Result<Dataset> {
    if bits == 0 || bits > 16 {
        return Err(Error::domain(format!("bits must be in 1..=16, got {bits}")));
    }
    let levels = f64::from(1u32 << bits);
    if let Some(i) = ds.x.iter().position(|v| v.fract() != 0.0 || *v < 0.0 || *v >= levels) {
        return Err(Error::domain(format!(
            "dequantize needs integers in [0, {levels}); value {} at element {i}",
            ds.x[i]
        )));
    }
    let mut out = ds.clone();
    for v in &mut out.x {
        *v = (*v + rng.uniform()) / levels;
    }
    out.meta.dequantized = true;
    out.meta.bits = Some(bits);
    Ok(out)
}

/// Area-average image rows to `height × width`, rounding to integers so the
/// result can still be dequantized.
pub fn downsample(ds: &Dataset, height: usize, width: usize) -> Result<Dataset> {
    let s = ds.shape;
    if height == 0 || width == 0 || height > s.height || width > s.width {
        return Err(Error::domain(format!("cannot downsample {s} to {height}x{width}")));
    }
    let wy = box_weights(s.height, height);
    let wx = box_weights(s.width, width);
    let out_shape = Shape::image(s.channels, height, width);
    let mut x = Vec::with_capacity(ds.len() * out_shape.len());
    for i in 0..ds.len() {
        let row = ds.row(i);
        for c in 0..s.channels {
            for ry in &wy {
                for rx in &wx {
                    let mut acc = 0.0;
                    for &(y, w1) in ry {
                        for &(xx, w2) in rx {
                            acc += w1 * w2 * row[(c * s.height + y) * s.width + xx];
                        }
                    }
                    x.push(acc.round());
                }
            }
        }
    }
    let mut out = ds.clone();
    out.x = x;
    out.shape = out_shape;
    out.meta.downsampled_to = Some((height, width));
    out.meta.replaced.clear();
    Ok(out)
}

// For each output cell, the source indices and overlap weights (summing to 1).
fn box_weights(from: usize, to: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = from as f64 / to as f64;
    (0..to)
        .map(|o| {
            let lo = o as f64 * ratio;
            let hi = lo + ratio;
            (lo.floor() as usize..(hi.ceil() as usize).min(from))
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (overlap > 0.0).then(|| (i, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

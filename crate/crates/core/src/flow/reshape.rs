use super::{Batch, Shape};
use crate::error::{Error, Result};

/// Space-to-depth: `C × H × W → 4C × H/2 × W/2`.
///
/// Output channel `4c + 2·di + dj` at `(h, w)` holds input channel `c` at
/// `(2h + di, 2w + dj)`. A pure permutation, so the log-det is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Squeeze {
    in_shape: Shape,
}

impl Squeeze {
    pub fn new(in_shape: Shape) -> Result<Self> {
        if in_shape.height % 2 != 0 || in_shape.width % 2 != 0 || in_shape.height == 0 {
            return Err(Error::shape("even height and width", in_shape));
        }
        Ok(Self { in_shape })
    }

    pub fn in_shape(&self) -> Shape {
        self.in_shape
    }

    pub fn out_shape(&self) -> Shape {
        let s = self.in_shape;
        Shape::image(4 * s.channels, s.height / 2, s.width / 2)
    }

    /// `(input index, output index)` pairs.
    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let s = self.in_shape;
        let (oh, ow) = (s.height / 2, s.width / 2);
        (0..s.channels).flat_map(move |c| {
            (0..s.height).flat_map(move |y| {
                (0..s.width).map(move |x| {
                    let src = (c * s.height + y) * s.width + x;
                    let oc = 4 * c + 2 * (y % 2) + (x % 2);
                    let dst = (oc * oh + y / 2) * ow + x / 2;
                    (src, dst)
                })
            })
        })
    }

    pub(crate) fn forward_batch(&self, batch: &mut Batch<'_>) {
        let len = self.in_shape.len();
        let mut tmp = vec![0.0; len];
        for i in 0..batch.n {
            let row = batch.row(i, len);
            for (src, dst) in self.pairs() {
                tmp[dst] = row[src];
            }
            row.copy_from_slice(&tmp);
        }
    }

    pub(crate) fn inverse_batch(&self, batch: &mut Batch<'_>) {
        let len = self.in_shape.len();
        let mut tmp = vec![0.0; len];
        for i in 0..batch.n {
            let row = batch.row(i, len);
            for (src, dst) in self.pairs() {
                tmp[src] = row[dst];
            }
            row.copy_from_slice(&tmp);
        }
    }
}

/// Multi-scale split: the first `⌊C/2⌋` channels stay active, the rest are
/// factored out and go directly to the base distribution.
///
/// With channel-major layout the factored-out channels are the tail of the
/// active slice, so the layer moves no data.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    in_shape: Shape,
}

impl Split {
    pub fn new(in_shape: Shape) -> Result<Self> {
        if in_shape.channels < 2 {
            return Err(Error::shape("at least 2 channels to split", in_shape));
        }
        Ok(Self { in_shape })
    }

    pub fn in_shape(&self) -> Shape {
        self.in_shape
    }

    pub fn out_shape(&self) -> Shape {
        let s = self.in_shape;
        Shape::image(s.channels / 2, s.height, s.width)
    }
}

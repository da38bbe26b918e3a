//! Binary model checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        8 bytes  "FATFLOW\0"
//! version      u32      1
//! seed         u64      model initialization seed
//! step         u64      training step at save time
//! data shape   u32 × 3  channels, height, width
//! base kind    u8       0 gaussian, 1 student_t, 2 laplace
//! nu           f64      degrees of freedom (0 unless student_t)
//! layer count  u32
//! per layer:
//!   kind       u8       0 actnorm, 1 invertible_linear, 2 affine_coupling, 3 squeeze, 4 split
//!   in shape   u32 × 3
//!   actnorm:            u8 initialized
//!   invertible_linear:  u32 × C permutation
//!   affine_coupling:    u8 swap, u32 hidden, u8 activation (0 tanh, 1 relu)
//!   params     u64 count, f64 × count
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{ActNorm, Activation, AffineCoupling, FlowModel, InvertibleLinear, Layer, Shape, Split, Squeeze};
use crate::base::{BaseDistribution, BaseKind};
use crate::codec::{write_f64, write_f64_vec, write_u32, write_u64, write_u8, OffsetReader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FATFLOW\0";
const FORMAT_VERSION: u32 = 1;
const MAX_PARAMS: usize = 1 << 28;

/// A saved model plus the training step it was saved at.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FlowModel,
    pub step: u64,
}

fn write_shape(w: &mut impl Write, s: Shape) -> Result<()> {
    write_u32(w, s.channels as u32)?;
    write_u32(w, s.height as u32)?;
    write_u32(w, s.width as u32)
}

fn read_shape<R: Read>(r: &mut OffsetReader<R>) -> Result<Shape> {
    let c = r.u32("shape")? as usize;
    let h = r.u32("shape")? as usize;
    let w = r.u32("shape")? as usize;
    Ok(Shape::image(c, h, w))
}

pub fn write_checkpoint(w: &mut impl Write, model: &FlowModel, step: u64) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, FORMAT_VERSION)?;
    write_u64(w, model.seed())?;
    write_u64(w, step)?;
    write_shape(w, model.data_shape())?;
    let (kind, nu) = match model.base().kind() {
        BaseKind::Gaussian => (0, 0.0),
        BaseKind::StudentT { nu } => (1, nu),
        BaseKind::Laplace => (2, 0.0),
    };
    write_u8(w, kind)?;
    write_f64(w, nu)?;
    write_u32(w, model.layers().len() as u32)?;
    for layer in model.layers() {
        let code = match layer {
            Layer::ActNorm(_) => 0,
            Layer::InvertibleLinear(_) => 1,
            Layer::AffineCoupling(_) => 2,
            Layer::Squeeze(_) => 3,
            Layer::Split(_) => 4,
        };
        write_u8(w, code)?;
        write_shape(w, layer.in_shape())?;
        match layer {
            Layer::ActNorm(a) => write_u8(w, a.is_initialized() as u8)?,
            Layer::InvertibleLinear(l) => {
                l.permutation().iter().try_for_each(|p| write_u32(w, *p as u32))?;
            }
            Layer::AffineCoupling(c) => {
                write_u8(w, c.swap() as u8)?;
                write_u32(w, c.hidden() as u32)?;
                write_u8(w, matches!(c.activation(), Activation::Relu) as u8)?;
            }
            Layer::Squeeze(_) | Layer::Split(_) => {}
        }
        write_f64_vec(w, layer.params())?;
    }
    Ok(())
}

pub fn read_checkpoint(reader: impl Read) -> Result<Checkpoint> {
    let mut r = OffsetReader::new(reader);
    if r.bytes(8, "magic")? != MAGIC {
        return Err(Error::Parse { offset: 0, message: "not a fatflow checkpoint (bad magic)".into() });
    }
    let at = r.offset();
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse { offset: at, message: format!("unsupported format version {version}") });
    }
    let seed = r.u64("seed")?;
    let step = r.u64("step")?;
    let data_shape = read_shape(&mut r)?;
    let at = r.offset();
    let kind = r.u8("base kind")?;
    let nu = r.f64("nu")?;
    let base_kind = match kind {
        0 => BaseKind::Gaussian,
        1 => BaseKind::StudentT { nu },
        2 => BaseKind::Laplace,
        k => return Err(Error::Parse { offset: at, message: format!("unknown base kind {k}") }),
    };
    let base = BaseDistribution::new(base_kind, data_shape.len())
        .map_err(|e| Error::Parse { offset: at, message: e.to_string() })?;
    let count = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        let at = r.offset();
        let code = r.u8("layer kind")?;
        let shape = read_shape(&mut r)?;
        let bad = |r: &OffsetReader<_>, msg: String| r.error(msg);
        let layer = match code {
            0 => {
                let init = r.u8("actnorm flag")? != 0;
                let params = r.f64_vec(MAX_PARAMS, "actnorm params")?;
                if params.len() != 2 * shape.channels {
                    return Err(bad(&r, format!("actnorm expects {} params", 2 * shape.channels)));
                }
                Layer::ActNorm(ActNorm::from_parts(shape, params, init))
            }
            1 => {
                let c = shape.channels;
                let perm = (0..c).map(|_| r.u32("permutation").map(|p| p as usize)).collect::<Result<Vec<_>>>()?;
                let mut seen = vec![false; c];
                for &p in &perm {
                    if p >= c || std::mem::replace(&mut seen[p], true) {
                        return Err(bad(&r, "invalid permutation".into()));
                    }
                }
                let params = r.f64_vec(MAX_PARAMS, "linear params")?;
                if params.len() != c * c {
                    return Err(bad(&r, format!("invertible linear expects {} params", c * c)));
                }
                Layer::InvertibleLinear(InvertibleLinear::from_parts(shape, perm, params))
            }
            2 => {
                let swap = r.u8("swap")? != 0;
                let hidden = r.u32("hidden")? as usize;
                let activation = if r.u8("activation")? == 1 { Activation::Relu } else { Activation::Tanh };
                let params = r.f64_vec(MAX_PARAMS, "coupling params")?;
                let layer = AffineCoupling::from_parts(shape, swap, hidden, activation, params);
                if layer.params().len() != layer.expected_param_len() {
                    return Err(bad(&r, format!("coupling expects {} params", layer.expected_param_len())));
                }
                Layer::AffineCoupling(layer)
            }
            3 | 4 => {
                let params = r.f64_vec(0, "reshape params")?;
                debug_assert!(params.is_empty());
                let made = if code == 3 {
                    Squeeze::new(shape).map(Layer::Squeeze)
                } else {
                    Split::new(shape).map(Layer::Split)
                };
                made.map_err(|e| Error::Parse { offset: at, message: e.to_string() })?
            }
            k => return Err(Error::Parse { offset: at, message: format!("unknown layer kind {k}") }),
        };
        layers.push(layer);
    }
    let at = r.offset();
    let model = FlowModel::from_layers(layers, base, data_shape, seed)
        .map_err(|e| Error::Parse { offset: at, message: e.to_string() })?;
    Ok(Checkpoint { model, step })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &FlowModel, step: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, step)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(crate::codec::open(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ModelSpec;

    #[test]
    fn roundtrip_is_bitwise() {
        let spec = ModelSpec {
            data_shape: Shape::image(1, 4, 4),
            steps: 1,
            levels: 2,
            hidden: 4,
            activation: Activation::Relu,
            base: BaseKind::StudentT { nu: 20.0 },
        };
        let mut model = FlowModel::new(&spec, 9).unwrap();
        model.update_params(|i, p| *p += 1e-3 * (i as f64).sin());
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, 17).unwrap();
        let back = read_checkpoint(&bytes[..]).unwrap();
        assert_eq!(back.step, 17);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back.model, 17).unwrap();
        assert_eq!(bytes, again);
        let a: Vec<u64> = model.params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.model.params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_and_corrupt_inputs_are_rejected() {
        let model = FlowModel::new(&ModelSpec::flat(2, 1, 3, BaseKind::Gaussian), 1).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model, 0).unwrap();
        for cut in [0, 5, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(read_checkpoint(&bytes[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut bad = bytes;
        bad[8] = 9; // version
        match read_checkpoint(&bad[..]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
    }
}

//! Invertible layers, their composition into a flow, and the training tape.
//!
//! # Direction convention
//!
//! A flow models data as `X = f(Z)` with `Z` drawn from a [`BaseDistribution`].
//! Layers are written in the *normalizing* direction: [`Layer::forward`] maps
//! towards the latent space and [`Layer::inverse`] maps towards the data.
//! The model's log-likelihood is therefore
//!
//! ```text
//! log p(x) = base.log_prob(z) + Σ_layers forward log|det J|,   z = f⁻¹(x)
//! ```
//!
//! and sampling runs the inverses in reverse order.
//!
//! # State layout
//!
//! Every sample is a flat vector of length `D`. Image data is stored in
//! channel-major (`C × H × W`) order. Each layer acts on a prefix of the
//! vector (its *active* part); `Split` shrinks the active prefix so that the
//! factored-out channels pass untouched to the base, which always sees the
//! full `D`-dimensional latent.
//!
//! [`BaseDistribution`]: crate::base::BaseDistribution

mod actnorm;
mod checkpoint;
mod coupling;
mod linear;
mod model;
mod reshape;

use serde::{Deserialize, Serialize};

pub use actnorm::ActNorm;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use coupling::{Activation, AffineCoupling};
pub use linear::InvertibleLinear;
pub use model::{FlowModel, ModelSpec, Tape};
pub use reshape::{Split, Squeeze};

use crate::error::{Error, Result};

/// Shape of the active part of a sample: channels × height × width.
///
/// Flat vector data of dimension `D` is `(D, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn flat(dim: usize) -> Self {
        Self { channels: dim, height: 1, width: 1 }
    }

    pub fn image(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    pub fn is_flat(&self) -> bool {
        self.height == 1 && self.width == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// One invertible layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    ActNorm(ActNorm),
    InvertibleLinear(InvertibleLinear),
    AffineCoupling(AffineCoupling),
    Squeeze(Squeeze),
    Split(Split),
}

/// Values cached by one layer during a recorded forward pass.
#[derive(Debug, Clone)]
pub(crate) enum Record {
    None,
    /// The layer input, `n × len` row-major.
    Input(Vec<f64>),
    Coupling(coupling::CouplingRecord),
}

/// A batch of samples being pushed through the flow.
///
/// `data` is `n × stride`; a layer works on columns `0..len` of each row.
pub(crate) struct Batch<'a> {
    pub data: &'a mut [f64],
    pub n: usize,
    pub stride: usize,
}

impl Batch<'_> {
    pub fn row(&mut self, i: usize, len: usize) -> &mut [f64] {
        &mut self.data[i * self.stride..i * self.stride + len]
    }

    pub fn gather(&self, len: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n * len);
        for i in 0..self.n {
            out.extend_from_slice(&self.data[i * self.stride..i * self.stride + len]);
        }
        out
    }
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::ActNorm(_) => "actnorm",
            Layer::InvertibleLinear(_) => "invertible_linear",
            Layer::AffineCoupling(_) => "affine_coupling",
            Layer::Squeeze(_) => "squeeze",
            Layer::Split(_) => "split",
        }
    }

    /// Shape this layer consumes in the forward direction.
    pub fn in_shape(&self) -> Shape {
        match self {
            Layer::ActNorm(l) => l.shape(),
            Layer::InvertibleLinear(l) => l.shape(),
            Layer::AffineCoupling(l) => l.shape(),
            Layer::Squeeze(l) => l.in_shape(),
            Layer::Split(l) => l.in_shape(),
        }
    }

    /// Shape this layer produces in the forward direction.
    pub fn out_shape(&self) -> Shape {
        match self {
            Layer::Squeeze(l) => l.out_shape(),
            Layer::Split(l) => l.out_shape(),
            other => other.in_shape(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Layer::ActNorm(l) => l.params(),
            Layer::InvertibleLinear(l) => l.params(),
            Layer::AffineCoupling(l) => l.params(),
            Layer::Squeeze(_) | Layer::Split(_) => &[],
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Layer::ActNorm(l) => l.params_mut(),
            Layer::InvertibleLinear(l) => l.params_mut(),
            Layer::AffineCoupling(l) => l.params_mut(),
            Layer::Squeeze(_) | Layer::Split(_) => &mut [],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    /// Push one sample through the layer in the normalizing direction.
    ///
    /// Returns the output and `ln|det ∂out/∂in|`.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_len(input, self.in_shape())?;
        let mut buf = input.to_vec();
        let mut logdet = [0.0];
        let mut batch = Batch { data: &mut buf, n: 1, stride: input.len() };
        self.forward_batch(0, &mut batch, &mut logdet, false)?;
        buf.truncate(self.out_shape().len());
        // Split keeps the factored-out tail in place; it is not part of the
        // layer output.
        Ok((buf, logdet[0]))
    }

    /// Exact inverse of [`Layer::forward`]; the returned log-det is that of the
    /// inverse map (the negative of the forward log-det at the matching point).
    ///
    /// `Split` cannot be inverted from its output alone; use
    /// [`FlowModel::sample`] or [`FlowModel::inverse`] for multi-scale models.
    pub fn inverse(&self, output: &[f64]) -> Result<(Vec<f64>, f64)> {
        if let Layer::Split(_) = self {
            return Err(Error::domain(
                "split layer inverse needs the factored-out channels; invert through the model",
            ));
        }
        self.check_len(output, self.out_shape())?;
        let mut buf = output.to_vec();
        let mut logdet = [0.0];
        let mut batch = Batch { data: &mut buf, n: 1, stride: output.len() };
        self.inverse_batch(0, &mut batch, &mut logdet)?;
        Ok((buf, logdet[0]))
    }

    fn check_len(&self, x: &[f64], shape: Shape) -> Result<()> {
        if x.len() != shape.len() {
            return Err(Error::shape(format!("{} values ({shape})", shape.len()), x.len()));
        }
        Ok(())
    }

    fn check_params(&self, index: usize) -> Result<()> {
        if let Some(i) = self.params().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: index,
                what: format!("{} parameter #{i}", self.kind_name()),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_batch(
        &self,
        index: usize,
        batch: &mut Batch<'_>,
        logdet: &mut [f64],
        record: bool,
    ) -> Result<Record> {
        self.check_params(index)?;
        match self {
            Layer::ActNorm(l) => l.forward_batch(index, batch, logdet, record),
            Layer::InvertibleLinear(l) => l.forward_batch(index, batch, logdet, record),
            Layer::AffineCoupling(l) => Ok(l.forward_batch(batch, logdet, record)),
            Layer::Squeeze(l) => {
                l.forward_batch(batch);
                Ok(Record::None)
            }
            Layer::Split(_) => Ok(Record::None),
        }
    }

    pub(crate) fn inverse_batch(&self, index: usize, batch: &mut Batch<'_>, logdet: &mut [f64]) -> Result<()> {
        self.check_params(index)?;
        match self {
            Layer::ActNorm(l) => l.inverse_batch(index, batch, logdet),
            Layer::InvertibleLinear(l) => l.inverse_batch(index, batch, logdet),
            Layer::AffineCoupling(l) => {
                l.inverse_batch(batch, logdet);
                Ok(())
            }
            Layer::Squeeze(l) => {
                l.inverse_batch(batch);
                Ok(())
            }
            Layer::Split(_) => Ok(()),
        }
    }

    /// Backpropagate through the layer.
    ///
    /// On entry `batch` holds `∂L/∂output` per row; on exit `∂L/∂input`.
    /// `dlogdet[i]` is `∂L/∂(log-det of row i)`. Parameter gradients are
    /// accumulated into `grad`.
    pub(crate) fn backward_batch(&self, record: &Record, batch: &mut Batch<'_>, dlogdet: &[f64], grad: &mut [f64]) {
        match (self, record) {
            (Layer::ActNorm(l), Record::Input(x)) => l.backward_batch(x, batch, dlogdet, grad),
            (Layer::InvertibleLinear(l), Record::Input(x)) => l.backward_batch(x, batch, dlogdet, grad),
            (Layer::AffineCoupling(l), Record::Coupling(r)) => l.backward_batch(r, batch, dlogdet, grad),
            (Layer::Squeeze(l), _) => l.inverse_batch(batch),
            (Layer::Split(_), _) => {}
            _ => unreachable!("record does not match layer kind"),
        }
    }
}

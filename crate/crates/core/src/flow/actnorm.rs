use log::warn;

use super::{Batch, Record, Shape};
use crate::error::{Error, Result};

/// Added to each channel's standard deviation during data initialization.
pub const ACTNORM_EPS: f64 = 1e-6;

/// Per-channel affine map `y = x · exp(log_scale) + bias`.
///
/// Parameters are laid out as `[log_scale; C, bias; C]`. The layer must be
/// initialized from data ([`ActNorm::data_init`]) or explicitly marked
/// initialized before it can be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ActNorm {
    shape: Shape,
    params: Vec<f64>,
    initialized: bool,
}

impl ActNorm {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            params: vec![0.0; 2 * shape.channels],
            initialized: false,
        }
    }

    pub(crate) fn from_parts(shape: Shape, params: Vec<f64>, initialized: bool) -> Self {
        Self { shape, params, initialized }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    /// Mark the layer usable with its current parameters (identity if untouched).
    pub fn set_initialized(&mut self) {
        self.initialized = true;
    }

    pub fn log_scale(&self) -> &[f64] {
        &self.params[..self.shape.channels]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.shape.channels..]
    }

    /// Set scale and bias so the layer's output on `batch` (row-major,
    /// `rows × shape.len()`) has zero mean and unit variance per channel.
    ///
    /// A channel whose standard deviation is zero gets scale `1 / ε` with
    /// `ε =` [`ACTNORM_EPS`] and a warning is logged.
    pub fn data_init(&mut self, batch: &[f64]) -> Result<()> {
        let len = self.shape.len();
        if len == 0 || batch.len() % len != 0 {
            return Err(Error::shape(format!("multiple of {len}"), batch.len()));
        }
        let rows = batch.len() / len;
        if rows < 2 {
            return Err(Error::domain("actnorm data init needs at least 2 rows"));
        }
        let hw = self.shape.spatial();
        let count = (rows * hw) as f64;
        let c_count = self.shape.channels;
        for c in 0..c_count {
            let values = || batch.chunks(len).flat_map(move |row| &row[c * hw..(c + 1) * hw]);
            let mean = values().sum::<f64>() / count;
            let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            let std = var.sqrt();
            if std == 0.0 {
                warn!("actnorm channel {c} has zero variance; using scale 1/{ACTNORM_EPS}");
            }
            let scale = 1.0 / (std + ACTNORM_EPS);
            self.params[c] = scale.ln();
            self.params[c_count + c] = -mean * scale;
        }
        self.initialized = true;
        Ok(())
    }

    fn ensure_init(&self, index: usize) -> Result<()> {
        if !self.initialized {
            return Err(Error::Uninitialized { layer: index, kind: "actnorm" });
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
        self.ensure_init(index)?;
        let len = self.shape.len();
        let hw = self.shape.spatial();
        let rec = if record { Record::Input(batch.gather(len)) } else { Record::None };
        let ld = hw as f64 * self.log_scale().iter().sum::<f64>();
        let scale: Vec<f64> = self.log_scale().iter().map(|v| v.exp()).collect();
        let bias = self.bias();
        for i in 0..batch.n {
            let row = batch.row(i, len);
            for (c, chunk) in row.chunks_mut(hw).enumerate() {
                for v in chunk {
                    *v = *v * scale[c] + bias[c];
                }
            }
            logdet[i] += ld;
        }
        Ok(rec)
    }

    pub(crate) fn inverse_batch(&self, index: usize, batch: &mut Batch<'_>, logdet: &mut [f64]) -> Result<()> {
        self.ensure_init(index)?;
        let len = self.shape.len();
        let hw = self.shape.spatial();
        let ld = hw as f64 * self.log_scale().iter().sum::<f64>();
        let inv_scale: Vec<f64> = self.log_scale().iter().map(|v| (-v).exp()).collect();
        let bias = self.bias();
        for i in 0..batch.n {
            let row = batch.row(i, len);
            for (c, chunk) in row.chunks_mut(hw).enumerate() {
                for v in chunk {
                    *v = (*v - bias[c]) * inv_scale[c];
                }
            }
            logdet[i] -= ld;
        }
        Ok(())
    }

    pub(crate) fn backward_batch(&self, input: &[f64], batch: &mut Batch<'_>, dlogdet: &[f64], grad: &mut [f64]) {
        let len = self.shape.len();
        let hw = self.shape.spatial();
        let channels = self.shape.channels;
        let scale: Vec<f64> = self.log_scale().iter().map(|v| v.exp()).collect();
        let (g_logs, g_bias) = grad.split_at_mut(channels);
        for i in 0..batch.n {
            let x = &input[i * len..(i + 1) * len];
            let g = batch.row(i, len);
            for c in 0..channels {
                let mut acc_s = 0.0;
                let mut acc_b = 0.0;
                for p in c * hw..(c + 1) * hw {
                    acc_s += g[p] * x[p];
                    acc_b += g[p];
                    g[p] *= scale[c];
                }
                g_logs[c] += acc_s * scale[c] + dlogdet[i] * hw as f64;
                g_bias[c] += acc_b;
            }
        }
    }
}

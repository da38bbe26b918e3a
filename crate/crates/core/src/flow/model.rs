use serde::{Deserialize, Serialize};

use super::{ActNorm, Activation, AffineCoupling, Batch, InvertibleLinear, Layer, Record, Shape, Split, Squeeze};
use crate::base::{BaseDistribution, BaseKind};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Architecture of a Glow-style flow.
///
/// One *step* is `ActNorm → InvertibleLinear → AffineCoupling`. Flat data
/// (`height = width = 1`) uses `steps` steps and ignores `levels`. Image data
/// uses `levels` levels of `Squeeze → steps × step`, with a `Split` after
/// every level except the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub data_shape: Shape,
    /// K: flow steps per level.
    pub steps: usize,
    /// L: number of levels (image data only).
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub activation: Activation,
    pub base: BaseKind,
}

fn default_levels() -> usize {
    1
}

fn default_hidden() -> usize {
    64
}

impl ModelSpec {
    pub fn flat(dim: usize, steps: usize, hidden: usize, base: BaseKind) -> Self {
        Self {
            data_shape: Shape::flat(dim),
            steps,
            levels: 1,
            hidden,
            activation: Activation::Tanh,
            base,
        }
    }
}

/// An ordered stack of invertible layers over a base distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    layers: Vec<Layer>,
    base: BaseDistribution,
    data_shape: Shape,
    seed: u64,
    version: u64,
}

/// Activations recorded by [`FlowModel::log_likelihood_with_tape`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    n: usize,
    records: Vec<Record>,
    latent: Vec<f64>,
}

impl Tape {
    pub fn rows(&self) -> usize {
        self.n
    }

    /// The latent codes `z = f⁻¹(x)`, `n × D`.
    pub fn latent(&self) -> &[f64] {
        &self.latent
    }
}

impl FlowModel {
    /// Build a model from `spec`; coupling networks and linear layers are
    /// randomly initialized from `seed`, ActNorm layers await data init.
    pub fn new(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shape = spec.data_shape;
        if shape.is_empty() {
            return Err(Error::config("data_shape", "must have at least one element"));
        }
        if spec.hidden == 0 {
            return Err(Error::config("hidden", "must be >= 1"));
        }
        let mut rng = RngState::new(seed);
        let mut layers = Vec::new();
        let mut step_index = 0;
        let mut push_steps = |layers: &mut Vec<Layer>, s: Shape, rng: &mut RngState| {
            for _ in 0..spec.steps {
                layers.push(Layer::ActNorm(ActNorm::new(s)));
                layers.push(Layer::InvertibleLinear(InvertibleLinear::random_rotation(s, rng)));
                layers.push(Layer::AffineCoupling(AffineCoupling::new(
                    s,
                    step_index % 2 == 1,
                    spec.hidden,
                    spec.activation,
                    rng,
                )));
                step_index += 1;
            }
        };
        if shape.is_flat() {
            push_steps(&mut layers, shape, &mut rng);
        } else {
            if spec.levels == 0 {
                return Err(Error::config("levels", "must be >= 1 for image data"));
            }
            let mut s = shape;
            for level in 0..spec.levels {
                let sq = Squeeze::new(s).map_err(|_| {
                    Error::config("levels", format!("level {level}: shape {s} cannot be squeezed"))
                })?;
                s = sq.out_shape();
                layers.push(Layer::Squeeze(sq));
                push_steps(&mut layers, s, &mut rng);
                if level + 1 < spec.levels {
                    let split = Split::new(s)?;
                    s = split.out_shape();
                    layers.push(Layer::Split(split));
                }
            }
        }
        let base = BaseDistribution::new(spec.base, shape.len())?;
        Ok(Self { layers, base, data_shape: shape, seed, version: 0 })
    }

    /// Assemble a model from explicit layers. Layer shapes must chain.
    pub fn from_layers(layers: Vec<Layer>, base: BaseDistribution, data_shape: Shape, seed: u64) -> Result<Self> {
        if base.dim() != data_shape.len() {
            return Err(Error::shape(format!("base of dimension {}", data_shape.len()), base.dim()));
        }
        let mut s = data_shape;
        for (i, layer) in layers.iter().enumerate() {
            if layer.in_shape() != s {
                return Err(Error::shape(format!("layer {i} input {s}"), layer.in_shape()));
            }
            s = layer.out_shape();
        }
        Ok(Self { layers, base, data_shape, seed, version: 0 })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn base(&self) -> &BaseDistribution {
        &self.base
    }

    pub fn data_shape(&self) -> Shape {
        self.data_shape
    }

    pub fn dim(&self) -> usize {
        self.data_shape.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Incremented on every parameter mutation through this API.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn is_initialized(&self) -> bool {
        self.layers.iter().all(|l| match l {
            Layer::ActNorm(a) => a.is_initialized(),
            _ => true,
        })
    }

    /// Mutable access to one layer's parameters; bumps the version.
    pub fn layer_params_mut(&mut self, index: usize) -> &mut [f64] {
        self.version += 1;
        self.layers[index].params_mut()
    }

    /// Mark every ActNorm initialized with its current parameters.
    pub fn mark_initialized(&mut self) {
        self.version += 1;
        for l in &mut self.layers {
            if let Layer::ActNorm(a) = l {
                a.set_initialized();
            }
        }
    }

    /// Data-dependent ActNorm initialization: pushes `batch` through the
    /// model and initializes each not-yet-initialized ActNorm on the
    /// activations that reach it.
    pub fn data_init(&mut self, batch: &[f64]) -> Result<()> {
        let n = self.rows(batch)?;
        let d = self.dim();
        let mut data = batch.to_vec();
        let mut logdet = vec![0.0; n];
        for i in 0..self.layers.len() {
            if let Layer::ActNorm(a) = &mut self.layers[i] {
                if !a.is_initialized() {
                    let len = a.shape().len();
                    let active = Batch { data: &mut data, n, stride: d }.gather(len);
                    a.data_init(&active)?;
                }
            }
            let mut b = Batch { data: &mut data, n, stride: d };
            self.layers[i].forward_batch(i, &mut b, &mut logdet, false)?;
        }
        self.version += 1;
        Ok(())
    }

    fn rows(&self, x: &[f64]) -> Result<usize> {
        let d = self.dim();
        if x.is_empty() || x.len() % d != 0 {
            return Err(Error::shape(format!("non-empty n × {d} batch"), format!("{} values", x.len())));
        }
        Ok(x.len() / d)
    }

    fn run_forward(&self, x: &[f64], record: bool) -> Result<(Vec<f64>, Vec<f64>, Vec<Record>)> {
        let n = self.rows(x)?;
        let d = self.dim();
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: 0, what: format!("input row {}", pos / d) });
        }
        let mut data = x.to_vec();
        let mut logdet = vec![0.0; n];
        let mut records = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        for (i, layer) in self.layers.iter().enumerate() {
            let mut b = Batch { data: &mut data, n, stride: d };
            let rec = layer.forward_batch(i, &mut b, &mut logdet, record)?;
            let len = layer.out_shape().len();
            for r in 0..n {
                let finite = logdet[r].is_finite() && data[r * d..r * d + len].iter().all(|v| v.is_finite());
                if !finite {
                    return Err(Error::NonFinite {
                        layer: i,
                        what: format!("{} output for row {r}", layer.kind_name()),
                    });
                }
            }
            if record {
                records.push(rec);
            }
        }
        Ok((data, logdet, records))
    }

    /// Map data to latent codes, `z = f⁻¹(x)`; returns `(z, Σ log-det)`.
    pub fn to_latent(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (z, ld, _) = self.run_forward(x, false)?;
        Ok((z, ld))
    }

    /// Per-row exact log-density of `x` (`n × D`, row-major).
    pub fn log_likelihood(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (z, ld, _) = self.run_forward(x, false)?;
        Ok(self.finish(&z, ld))
    }

    /// As [`FlowModel::log_likelihood`], also recording a tape for
    /// [`FlowModel::backward`].
    pub fn log_likelihood_with_tape(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        let (z, ld, records) = self.run_forward(x, true)?;
        let ll = self.finish(&z, ld);
        let tape = Tape { version: self.version, n: ll.len(), records, latent: z };
        Ok((ll, tape))
    }

    fn finish(&self, z: &[f64], mut ld: Vec<f64>) -> Vec<f64> {
        for (row, l) in z.chunks(self.dim()).zip(ld.iter_mut()) {
            *l += self.base.log_prob_unchecked(row);
        }
        ld
    }

    /// Gradients of `L = Σ_i dloglik[i] · loglik[i]` with respect to every
    /// parameter, flattened in [`FlowModel::params`] order.
    ///
    /// For the mean NLL per dimension, pass `dloglik[i] = -1 / (n · D)`.
    pub fn backward(&self, tape: &Tape, dloglik: &[f64]) -> Result<Vec<f64>> {
        if tape.version != self.version {
            return Err(Error::StaleTape { tape: tape.version, model: self.version });
        }
        if dloglik.len() != tape.n || tape.records.len() != self.layers.len() {
            return Err(Error::shape(tape.n, dloglik.len()));
        }
        let n = tape.n;
        let d = self.dim();
        let mut g = vec![0.0; n * d];
        let mut buf = vec![0.0; d];
        for i in 0..n {
            self.base.grad_log_prob_into(&tape.latent[i * d..(i + 1) * d], &mut buf);
            for (o, v) in g[i * d..(i + 1) * d].iter_mut().zip(&buf) {
                *o = dloglik[i] * v;
            }
        }
        let offsets = self.param_offsets();
        let mut grad = vec![0.0; self.param_count()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut b = Batch { data: &mut g, n, stride: d };
            let range = offsets[i]..offsets[i] + layer.param_count();
            layer.backward_batch(&tape.records[i], &mut b, dloglik, &mut grad[range]);
        }
        Ok(grad)
    }

    /// Map latent codes to data, `x = f(z)`; returns `(x, Σ inverse log-det)`.
    pub fn inverse(&self, z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.rows(z)?;
        let d = self.dim();
        let mut data = z.to_vec();
        let mut logdet = vec![0.0; n];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut b = Batch { data: &mut data, n, stride: d };
            layer.inverse_batch(i, &mut b, &mut logdet)?;
        }
        Ok((data, logdet))
    }

    /// Draw `n` samples `x = f(z)`, `z ~ base`.
    pub fn sample(&self, n: usize, rng: &mut RngState) -> Result<Vec<f64>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let z = self.base.sample(n, rng);
        Ok(self.inverse(&z)?.0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = acc;
                acc += l.param_count();
                o
            })
            .collect()
    }

    /// All parameters concatenated in layer order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.params());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(self.param_count(), params.len()));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (head, tail) = rest.split_at(l.param_count());
            l.params_mut().copy_from_slice(head);
            rest = tail;
        }
        self.version += 1;
        Ok(())
    }

    /// Apply `f(param, index)` to every parameter in flat order.
    pub fn update_params(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut k = 0;
        for l in &mut self.layers {
            for p in l.params_mut() {
                f(k, p);
                k += 1;
            }
        }
        self.version += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn identity_model(kind: BaseKind, d: usize) -> FlowModel {
        let base = BaseDistribution::new(kind, d).unwrap();
        let s = Shape::flat(d);
        let mut an = ActNorm::new(s);
        an.set_initialized();
        let layers = vec![Layer::ActNorm(an), Layer::InvertibleLinear(InvertibleLinear::identity(s))];
        FlowModel::from_layers(layers, base, s, 0).unwrap()
    }

    #[test]
    fn identity_model_reduces_to_base() {
        let g = identity_model(BaseKind::Gaussian, 2);
        let ll = g.log_likelihood(&[0.0, 0.0]).unwrap();
        assert!((ll[0] + (2.0 * PI).ln()).abs() < 1e-14);
        let t = identity_model(BaseKind::StudentT { nu: 50.0 }, 2);
        let ll = t.log_likelihood(&[0.0, 0.0]).unwrap();
        assert!((ll[0] + 1.837_877_1).abs() < 1e-7);
    }

    #[test]
    fn uninitialized_actnorm_is_an_error() {
        let spec = ModelSpec::flat(2, 1, 4, BaseKind::Gaussian);
        let m = FlowModel::new(&spec, 1).unwrap();
        assert!(!m.is_initialized());
        assert!(matches!(m.log_likelihood(&[0.0, 0.0]), Err(Error::Uninitialized { layer: 0, .. })));
    }

    #[test]
    fn non_finite_input_and_parameters_are_reported() {
        let mut m = identity_model(BaseKind::Gaussian, 2);
        assert!(matches!(m.log_likelihood(&[f64::NAN, 0.0]), Err(Error::NonFinite { .. })));
        m.layer_params_mut(0)[0] = f64::INFINITY;
        match m.log_likelihood(&[0.0, 0.0]) {
            Err(Error::NonFinite { layer, .. }) => assert_eq!(layer, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stale_tape_is_rejected() {
        let mut m = identity_model(BaseKind::Gaussian, 2);
        let (_, tape) = m.log_likelihood_with_tape(&[0.5, 0.5]).unwrap();
        m.update_params(|_, p| *p += 0.0);
        assert!(matches!(m.backward(&tape, &[1.0]), Err(Error::StaleTape { .. })));
    }

    #[test]
    fn image_architecture_shapes() {
        let spec = ModelSpec {
            data_shape: Shape::image(1, 8, 8),
            steps: 2,
            levels: 3,
            hidden: 8,
            activation: Activation::Relu,
            base: BaseKind::StudentT { nu: 20.0 },
        };
        let m = FlowModel::new(&spec, 3).unwrap();
        let kinds: Vec<_> = m.layers().iter().map(Layer::kind_name).collect();
        assert_eq!(kinds.iter().filter(|k| **k == "squeeze").count(), 3);
        assert_eq!(kinds.iter().filter(|k| **k == "split").count(), 2);
        assert_eq!(m.layers().last().unwrap().out_shape(), Shape::image(16, 1, 1));
        assert_eq!(m.base().dim(), 64);

        let too_deep = ModelSpec { levels: 4, ..spec };
        assert!(FlowModel::new(&too_deep, 3).is_err());
    }
}

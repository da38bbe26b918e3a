use serde::{Deserialize, Serialize};

use super::{Batch, Record, Shape};
use crate::rng::RngState;

/// Pre-activations of the scale are clamped to `[-SCALE_CLAMP, SCALE_CLAMP]`.
pub const SCALE_CLAMP: f64 = 5.0;

/// Hidden-layer nonlinearity of the coupling network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }

    // Derivative expressed through the activation output `h`.
    fn deriv(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Affine coupling: one half of the active vector conditions an elementwise
/// affine map of the other half.
///
/// With `a` the conditioning part and `b` the transformed part,
///
/// ```text
/// (shift, pre) = net(a)
/// s            = exp(clamp(pre, -5, 5))
/// b'           = b ⊙ s + shift,     log|det| = Σ clamp(pre)
/// ```
///
/// The split point is `⌊C/2⌋` channels. Without `swap`, the first part
/// conditions and the second is transformed; `swap` reverses the roles.
///
/// `net` is a two-hidden-layer MLP. Parameters are laid out as
/// `[W1 (h × m_in), b1, W2 (h × h), b2, W3 (2·m_out × h), b3]`, row-major,
/// where the first `m_out` outputs are the shift and the rest the scale
/// pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineCoupling {
    shape: Shape,
    swap: bool,
    hidden: usize,
    activation: Activation,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct CouplingRecord {
    input: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    pre: Vec<f64>,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    end: usize,
}

impl AffineCoupling {
    /// New coupling whose final network layer is zero, so the layer starts as
    /// the identity. Hidden weights use Glorot-uniform initialization.
    pub fn new(shape: Shape, swap: bool, hidden: usize, activation: Activation, rng: &mut RngState) -> Self {
        let mut layer = Self {
            shape,
            swap,
            hidden,
            activation,
            params: Vec::new(),
        };
        let (m_in, _) = layer.split_sizes();
        let o = layer.offsets();
        layer.params = vec![0.0; o.end];
        let lim1 = (6.0 / (m_in + hidden).max(1) as f64).sqrt();
        let lim2 = (6.0 / (2 * hidden) as f64).sqrt();
        for v in &mut layer.params[o.w1..o.b1] {
            *v = rng.uniform_range(-lim1, lim1);
        }
        for v in &mut layer.params[o.w2..o.b2] {
            *v = rng.uniform_range(-lim2, lim2);
        }
        layer
    }

    pub(crate) fn from_parts(shape: Shape, swap: bool, hidden: usize, activation: Activation, params: Vec<f64>) -> Self {
        Self { shape, swap, hidden, activation, params }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn swap(&self) -> bool {
        self.swap
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn expected_param_len(&self) -> usize {
        self.offsets().end
    }

    /// Number of elements in the first part.
    fn first_len(&self) -> usize {
        (self.shape.channels / 2) * self.shape.spatial()
    }

    /// `(conditioning length, transformed length)`.
    fn split_sizes(&self) -> (usize, usize) {
        let first = self.first_len();
        let second = self.shape.len() - first;
        if self.swap {
            (second, first)
        } else {
            (first, second)
        }
    }

    /// `(conditioning range start, transformed range start)` within a row.
    fn ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let first = self.first_len();
        let len = self.shape.len();
        if self.swap {
            (first..len, 0..first)
        } else {
            (0..first, first..len)
        }
    }

    fn offsets(&self) -> Offsets {
        let (m_in, m_out) = self.split_sizes();
        let h = self.hidden;
        let w1 = 0;
        let b1 = w1 + h * m_in;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + 2 * m_out * h;
        let end = b3 + 2 * m_out;
        Offsets { w1, b1, w2, b2, w3, b3, end }
    }

    /// Evaluate the conditioner; fills `h1`, `h2` and `out` (shift ‖ pre).
    fn net(&self, cond: &[f64], h1: &mut [f64], h2: &mut [f64], out: &mut [f64]) {
        let o = self.offsets();
        let p = &self.params;
        let h = self.hidden;
        let m_in = cond.len();
        for j in 0..h {
            let w = &p[o.w1 + j * m_in..o.w1 + (j + 1) * m_in];
            let a = p[o.b1 + j] + dot(w, cond);
            h1[j] = self.activation.apply(a);
        }
        for j in 0..h {
            let w = &p[o.w2 + j * h..o.w2 + (j + 1) * h];
            h2[j] = self.activation.apply(p[o.b2 + j] + dot(w, h1));
        }
        for (j, v) in out.iter_mut().enumerate() {
            let w = &p[o.w3 + j * h..o.w3 + (j + 1) * h];
            *v = p[o.b3 + j] + dot(w, h2);
        }
    }

    pub(crate) fn forward_batch(&self, batch: &mut Batch<'_>, logdet: &mut [f64], record: bool) -> Record {
        let len = self.shape.len();
        let (m_in, m_out) = self.split_sizes();
        let (cond_r, trans_r) = self.ranges();
        let h = self.hidden;
        let n = batch.n;
        let mut rec = record.then(|| CouplingRecord {
            input: batch.gather(len),
            h1: vec![0.0; n * h],
            h2: vec![0.0; n * h],
            pre: vec![0.0; n * m_out],
        });
        let mut h1 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        let mut out = vec![0.0; 2 * m_out];
        let mut cond = vec![0.0; m_in];
        for i in 0..n {
            let row = batch.row(i, len);
            cond.copy_from_slice(&row[cond_r.clone()]);
            self.net(&cond, &mut h1, &mut h2, &mut out);
            let (shift, pre) = out.split_at(m_out);
            let mut ld = 0.0;
            for (k, v) in row[trans_r.clone()].iter_mut().enumerate() {
                let ls = pre[k].clamp(-SCALE_CLAMP, SCALE_CLAMP);
                *v = *v * ls.exp() + shift[k];
                ld += ls;
            }
            logdet[i] += ld;
            if let Some(r) = rec.as_mut() {
                r.h1[i * h..(i + 1) * h].copy_from_slice(&h1);
                r.h2[i * h..(i + 1) * h].copy_from_slice(&h2);
                r.pre[i * m_out..(i + 1) * m_out].copy_from_slice(pre);
            }
        }
        rec.map_or(Record::None, Record::Coupling)
    }

    pub(crate) fn inverse_batch(&self, batch: &mut Batch<'_>, logdet: &mut [f64]) {
        let len = self.shape.len();
        let (m_in, m_out) = self.split_sizes();
        let (cond_r, trans_r) = self.ranges();
        let h = self.hidden;
        let mut h1 = vec![0.0; h];
        let mut h2 = vec![0.0; h];
        let mut out = vec![0.0; 2 * m_out];
        let mut cond = vec![0.0; m_in];
        for i in 0..batch.n {
            let row = batch.row(i, len);
            cond.copy_from_slice(&row[cond_r.clone()]);
            self.net(&cond, &mut h1, &mut h2, &mut out);
            let (shift, pre) = out.split_at(m_out);
            let mut ld = 0.0;
            for (k, v) in row[trans_r.clone()].iter_mut().enumerate() {
                let ls = pre[k].clamp(-SCALE_CLAMP, SCALE_CLAMP);
                *v = (*v - shift[k]) * (-ls).exp();
                ld += ls;
            }
            logdet[i] -= ld;
        }
    }

    pub(crate) fn backward_batch(&self, rec: &CouplingRecord, batch: &mut Batch<'_>, dlogdet: &[f64], grad: &mut [f64]) {
        let len = self.shape.len();
        let (m_in, m_out) = self.split_sizes();
        let (cond_r, trans_r) = self.ranges();
        let h = self.hidden;
        let o = self.offsets();
        let p = &self.params;
        let mut g_out = vec![0.0; 2 * m_out];
        let mut g_h2 = vec![0.0; h];
        let mut g_h1 = vec![0.0; h];
        for i in 0..batch.n {
            let x = &rec.input[i * len..(i + 1) * len];
            let h1 = &rec.h1[i * h..(i + 1) * h];
            let h2 = &rec.h2[i * h..(i + 1) * h];
            let pre = &rec.pre[i * m_out..(i + 1) * m_out];
            let cond = &x[cond_r.clone()];
            let x_t = &x[trans_r.clone()];
            let g = batch.row(i, len);

            // elementwise affine part
            {
                let g_t = &mut g[trans_r.clone()];
                let (g_shift, g_pre) = g_out.split_at_mut(m_out);
                for k in 0..m_out {
                    let inside = pre[k] > -SCALE_CLAMP && pre[k] < SCALE_CLAMP;
                    let s = pre[k].clamp(-SCALE_CLAMP, SCALE_CLAMP).exp();
                    g_shift[k] = g_t[k];
                    g_pre[k] = if inside { g_t[k] * x_t[k] * s + dlogdet[i] } else { 0.0 };
                    g_t[k] *= s;
                }
            }

            // output layer
            g_h2.fill(0.0);
            for (j, &go) in g_out.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                grad[o.b3 + j] += go;
                let w = &p[o.w3 + j * h..o.w3 + (j + 1) * h];
                let gw = &mut grad[o.w3 + j * h..o.w3 + (j + 1) * h];
                for k in 0..h {
                    gw[k] += go * h2[k];
                    g_h2[k] += go * w[k];
                }
            }
            // hidden layer 2
            g_h1.fill(0.0);
            for j in 0..h {
                let ga = g_h2[j] * self.activation.deriv(h2[j]);
                if ga == 0.0 {
                    continue;
                }
                grad[o.b2 + j] += ga;
                let w = &p[o.w2 + j * h..o.w2 + (j + 1) * h];
                let gw = &mut grad[o.w2 + j * h..o.w2 + (j + 1) * h];
                for k in 0..h {
                    gw[k] += ga * h1[k];
                    g_h1[k] += ga * w[k];
                }
            }
            // hidden layer 1, accumulating into the conditioning gradient
            let g_c = &mut g[cond_r.clone()];
            for j in 0..h {
                let ga = g_h1[j] * self.activation.deriv(h1[j]);
                if ga == 0.0 {
                    continue;
                }
                grad[o.b1 + j] += ga;
                let w = &p[o.w1 + j * m_in..o.w1 + (j + 1) * m_in];
                let gw = &mut grad[o.w1 + j * m_in..o.w1 + (j + 1) * m_in];
                for k in 0..m_in {
                    gw[k] += ga * cond[k];
                    g_c[k] += ga * w[k];
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

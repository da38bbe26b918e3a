use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate as a function of the optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant { lr: f64 },
    /// `lr_end + ½(lr_start − lr_end)(1 + cos(π·step/total_steps))`,
    /// held at `lr_end` after `total_steps`.
    Cosine { lr_start: f64, lr_end: f64, total_steps: usize },
    /// Transformer-style warmup then inverse-square-root decay:
    /// with `s = max(step, 1)` and `w = warmup`,
    /// `peak · min(s^-½, s·w^-3/2) / w^-½`, floored at `floor`.
    /// The normalizer makes the value at `s = w` equal to `peak`.
    Noam { peak: f64, floor: f64, warmup: usize },
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::Cosine { lr_start, lr_end, total_steps } => {
                if total_steps == 0 || step >= total_steps {
                    return lr_end;
                }
                let frac = step as f64 / total_steps as f64;
                lr_end + 0.5 * (lr_start - lr_end) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
            LrSchedule::Noam { peak, floor, warmup } => {
                let s = step.max(1) as f64;
                let w = warmup.max(1) as f64;
                let raw = s.powf(-0.5).min(s * w.powf(-1.5));
                (peak * raw / w.powf(-0.5)).max(floor)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("train.lr_schedule.{field}"), format!("must be a finite value > 0, got {v}")))
            }
        };
        match *self {
            LrSchedule::Constant { lr } => positive("lr", lr),
            LrSchedule::Cosine { lr_start, lr_end, .. } => positive("lr_start", lr_start).and(positive("lr_end", lr_end)),
            LrSchedule::Noam { peak, floor, .. } => positive("peak", peak).and(positive("floor", floor)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }
}

/// One bias-corrected Adam update in place.
///
/// The update is computed in full before any parameter is written, so a
/// non-finite result leaves `params` and `state` untouched.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape(params.len(), format!("grads {}, state {}", grads.len(), state.m.len())));
    }
    let t = state.t + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    let mut delta = Vec::with_capacity(params.len());
    for (i, g) in grads.iter().enumerate() {
        let mi = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let d = lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        if !d.is_finite() {
            return Err(Error::domain(format!("non-finite Adam update for parameter {i}")));
        }
        m.push(mi);
        v.push(vi);
        delta.push(d);
    }
    for (p, d) in params.iter_mut().zip(&delta) {
        *p -= d;
    }
    state.m = m;
    state.v = v;
    state.t = t;
    Ok(())
}

/// Gradient clipping rule.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClipMode {
    #[default]
    None,
    /// Rescale so the global ℓ2 norm is at most `threshold`.
    Norm { threshold: f64 },
    /// Clamp every component to `[-threshold, threshold]`.
    Element { threshold: f64 },
    /// Element clamp, then norm rescale.
    Both { norm: f64, element: f64 },
}

impl ClipMode {
    pub fn validate(&self) -> Result<()> {
        let check = |field: &str, v: f64| {
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("train.clip.{field}"), format!("threshold must be > 0, got {v}")))
            }
        };
        match *self {
            ClipMode::None => Ok(()),
            ClipMode::Norm { threshold } | ClipMode::Element { threshold } => check("threshold", threshold),
            ClipMode::Both { norm, element } => check("norm", norm).and(check("element", element)),
        }
    }
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Clip `grads` in place; returns the global norm before clipping.
pub fn clip_gradients(grads: &mut [f64], mode: &ClipMode) -> f64 {
    let pre = global_norm(grads);
    let clamp = |grads: &mut [f64], t: f64| grads.iter_mut().for_each(|g| *g = g.clamp(-t, t));
    let rescale = |grads: &mut [f64], t: f64| {
        let g = global_norm(grads);
        if g > t {
            let s = t / g;
            grads.iter_mut().for_each(|v| *v *= s);
        }
    };
    match *mode {
        ClipMode::None => {}
        ClipMode::Norm { threshold } => rescale(grads, threshold),
        ClipMode::Element { threshold } => clamp(grads, threshold),
        ClipMode::Both { norm, element } => {
            clamp(grads, element);
            rescale(grads, norm);
        }
    }
    pre
}

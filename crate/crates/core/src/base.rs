//! Latent (base) distributions for flows.
//!
//! All three families are centred at the origin with unit scale: the
//! Student-t has location 0 and scale matrix I, the Gaussian is N(0, I), and
//! the Laplace is a product of independent unit-scale Laplace components.
//! Location and scale are left to the flow layers.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::special::{log_gamma_unchecked, sample_chi_square};

/// Family of a base distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseKind {
    Gaussian,
    /// Multivariate Student-t with `nu` degrees of freedom (fixed, not learned).
    StudentT { nu: f64 },
    Laplace,
}

impl BaseKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaseKind::Gaussian => "gaussian",
            BaseKind::StudentT { .. } => "student_t",
            BaseKind::Laplace => "laplace",
        }
    }

    /// Degrees of freedom, with the Gaussian reported as `ν = ∞`.
    pub fn nu(&self) -> Option<f64> {
        match self {
            BaseKind::Gaussian => Some(f64::INFINITY),
            BaseKind::StudentT { nu } => Some(*nu),
            BaseKind::Laplace => None,
        }
    }

    /// Student-t for finite `nu`, Gaussian for `nu = ∞`.
    pub fn from_nu(nu: f64) -> Self {
        if nu.is_infinite() {
            BaseKind::Gaussian
        } else {
            BaseKind::StudentT { nu }
        }
    }
}

impl std::fmt::Display for BaseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BaseKind::StudentT { nu } => write!(f, "student_t(nu={nu})"),
            other => f.write_str(other.name()),
        }
    }
}

/// A base distribution of dimension `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseDistribution {
    kind: BaseKind,
    dim: usize,
    log_norm: f64,
}

impl BaseDistribution {
    pub fn new(kind: BaseKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("base distribution dimension must be >= 1"));
        }
        let d = dim as f64;
        let log_norm = match kind {
            BaseKind::Gaussian => -0.5 * d * (2.0 * PI).ln(),
            BaseKind::Laplace => -d * LN_2,
            BaseKind::StudentT { nu } => {
                if !(nu > 0.0) || nu.is_infinite() {
                    return Err(Error::domain(format!("Student-t requires finite nu > 0, got {nu}")));
                }
                log_gamma_unchecked(0.5 * (nu + d))
                    - log_gamma_unchecked(0.5 * nu)
                    - 0.5 * d * (PI * nu).ln()
            }
        };
        Ok(Self { kind, dim, log_norm })
    }

    pub fn gaussian(dim: usize) -> Result<Self> {
        Self::new(BaseKind::Gaussian, dim)
    }

    pub fn student_t(nu: f64, dim: usize) -> Result<Self> {
        Self::new(BaseKind::StudentT { nu }, dim)
    }

    pub fn laplace(dim: usize) -> Result<Self> {
        Self::new(BaseKind::Laplace, dim)
    }

    pub fn kind(&self) -> BaseKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::shape(self.dim, x.len()));
        }
        Ok(())
    }

    /// Log-density at `x`.
    pub fn log_prob(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.log_prob_unchecked(x))
    }

    pub(crate) fn log_prob_unchecked(&self, x: &[f64]) -> f64 {
        match self.kind {
            BaseKind::Gaussian => self.log_norm - 0.5 * sq_norm(x),
            BaseKind::Laplace => self.log_norm - x.iter().map(|v| v.abs()).sum::<f64>(),
            BaseKind::StudentT { nu } => {
                let d = self.dim as f64;
                self.log_norm - 0.5 * (nu + d) * (sq_norm(x) / nu).ln_1p()
            }
        }
    }

    /// Gradient of the log-density with respect to `x`.
    ///
    /// For the Laplace family a zero component gets the subgradient 0.
    pub fn grad_log_prob(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut g = vec![0.0; self.dim];
        self.grad_log_prob_into(x, &mut g);
        Ok(g)
    }

    pub(crate) fn grad_log_prob_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            BaseKind::Gaussian => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -v;
                }
            }
            BaseKind::Laplace => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = if *v > 0.0 {
                        -1.0
                    } else if *v < 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                }
            }
            BaseKind::StudentT { nu } => {
                let w = -(nu + self.dim as f64) / (nu + sq_norm(x));
                for (o, v) in out.iter_mut().zip(x) {
                    *o = w * v;
                }
            }
        }
    }

    /// Draw `n` samples, returned row-major as an `n × dim` buffer.
    ///
    /// Student-t rows are `z / sqrt(w / ν)` with `z ~ N(0, I)` and one
    /// scalar `w ~ χ²_ν` shared by every component of the row.
    pub fn sample(&self, n: usize, rng: &mut RngState) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; n * d];
        match self.kind {
            BaseKind::Gaussian => out.iter_mut().for_each(|v| *v = rng.normal()),
            BaseKind::Laplace => out.iter_mut().for_each(|v| *v = sample_laplace(rng)),
            BaseKind::StudentT { nu } => {
                let w = sample_chi_square(nu, n, rng).expect("nu validated at construction");
                for (row, wi) in out.chunks_mut(d).zip(w) {
                    let inv = 1.0 / (wi / nu).sqrt();
                    for v in row.iter_mut() {
                        *v = rng.normal() * inv;
                    }
                }
            }
        }
        out
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

// Inverse CDF of the unit-scale Laplace distribution.
fn sample_laplace(rng: &mut RngState) -> f64 {
    let u = rng.uniform() - 0.5;
    if u == -0.5 {
        // ln(0) guard; probability 2^-53
        return 0.0;
    }
    -u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

use nalgebra::DMatrix;

use super::{Batch, Record, Shape};
use crate::error::{Error, Result};
use crate::rng::RngState;

/// Invertible linear map over channels (a 1×1 convolution for images),
/// stored in LU-factored form `W = P · L · U`.
///
/// `P` is a fixed permutation, `L` is unit lower-triangular and `U` is upper
/// triangular with a learnable diagonal, so `ln|det W| = Σ ln|U_ii|`.
/// Parameters are laid out as `[L strictly-lower (row-major), U strictly-upper
/// (row-major), diag(U)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertibleLinear {
    shape: Shape,
    perm: Vec<usize>,
    params: Vec<f64>,
}

fn tri_len(c: usize) -> usize {
    c * (c.saturating_sub(1)) / 2
}

impl InvertibleLinear {
    /// The identity map (`P = L = U = I`).
    pub fn identity(shape: Shape) -> Self {
        let c = shape.channels;
        let mut params = vec![0.0; 2 * tri_len(c) + c];
        params[2 * tri_len(c)..].fill(1.0);
        Self { shape, perm: (0..c).collect(), params }
    }

    /// A random rotation, LU-factored with partial pivoting.
    pub fn random_rotation(shape: Shape, rng: &mut RngState) -> Self {
        let c = shape.channels;
        let gauss = DMatrix::from_fn(c, c, |_, _| rng.normal());
        let q = gauss.qr().q();
        let lu = q.clone().lu();
        let (p, l, u) = lu.unpack();
        // nalgebra factors P·Q = L·U; recover our W = P'·L·U with P' = P⁻¹.
        let mut p_inv = DMatrix::<f64>::identity(c, c);
        p.inv_permute_rows(&mut p_inv);
        let perm: Vec<usize> = (0..c)
            .map(|i| (0..c).find(|&j| p_inv[(i, j)] == 1.0).expect("permutation matrix"))
            .collect();
        let mut params = Vec::with_capacity(2 * tri_len(c) + c);
        for i in 0..c {
            for j in 0..i {
                params.push(l[(i, j)]);
            }
        }
        for i in 0..c {
            for j in i + 1..c {
                params.push(u[(i, j)]);
            }
        }
        for i in 0..c {
            params.push(u[(i, i)]);
        }
        Self { shape, perm, params }
    }

    pub(crate) fn from_parts(shape: Shape, perm: Vec<usize>, params: Vec<f64>) -> Self {
        Self { shape, perm, params }
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

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn u_diag(&self) -> &[f64] {
        let c = self.shape.channels;
        &self.params[2 * tri_len(c)..]
    }

    /// Dense `(L, U)` factors, row-major `C × C`.
    fn factors(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.shape.channels;
        let t = tri_len(c);
        let mut l = vec![0.0; c * c];
        let mut u = vec![0.0; c * c];
        let mut k = 0;
        for i in 0..c {
            for j in 0..i {
                l[i * c + j] = self.params[k];
                k += 1;
            }
            l[i * c + i] = 1.0;
        }
        let mut k = t;
        for i in 0..c {
            for j in i + 1..c {
                u[i * c + j] = self.params[k];
                k += 1;
            }
        }
        for i in 0..c {
            u[i * c + i] = self.params[2 * t + i];
        }
        (l, u)
    }

    /// Dense `W = P·L·U`, row-major.
    pub fn weight(&self) -> Vec<f64> {
        let c = self.shape.channels;
        let (l, u) = self.factors();
        let mut lu = vec![0.0; c * c];
        for i in 0..c {
            for k in 0..=i {
                let lik = l[i * c + k];
                for j in k..c {
                    lu[i * c + j] += lik * u[k * c + j];
                }
            }
        }
        let mut w = vec![0.0; c * c];
        for i in 0..c {
            w[i * c..(i + 1) * c].copy_from_slice(&lu[self.perm[i] * c..(self.perm[i] + 1) * c]);
        }
        w
    }

    fn logdet(&self) -> f64 {
        self.shape.spatial() as f64 * self.u_diag().iter().map(|u| u.abs().ln()).sum::<f64>()
    }

    fn check_diag(&self, index: usize) -> Result<()> {
        if let Some(i) = self.u_diag().iter().position(|&u| u == 0.0) {
            return Err(Error::Singular { layer: index, index: i });
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
        self.check_diag(index)?;
        let c = self.shape.channels;
        let hw = self.shape.spatial();
        let len = self.shape.len();
        let rec = if record { Record::Input(batch.gather(len)) } else { Record::None };
        let w = self.weight();
        let ld = self.logdet();
        let mut x = vec![0.0; c];
        for i in 0..batch.n {
            let row = batch.row(i, len);
            for p in 0..hw {
                for k in 0..c {
                    x[k] = row[k * hw + p];
                }
                for r in 0..c {
                    let wr = &w[r * c..(r + 1) * c];
                    row[r * hw + p] = wr.iter().zip(&x).map(|(a, b)| a * b).sum();
                }
            }
            logdet[i] += ld;
        }
        Ok(rec)
    }

    pub(crate) fn inverse_batch(&self, index: usize, batch: &mut Batch<'_>, logdet: &mut [f64]) -> Result<()> {
        self.check_diag(index)?;
        let c = self.shape.channels;
        let hw = self.shape.spatial();
        let len = self.shape.len();
        let (l, u) = self.factors();
        let ld = self.logdet();
        let mut v = vec![0.0; c];
        for i in 0..batch.n {
            let row = batch.row(i, len);
            for p in 0..hw {
                // P⁻¹ y
                for r in 0..c {
                    v[self.perm[r]] = row[r * hw + p];
                }
                // L⁻¹ (forward substitution, unit diagonal)
                for r in 0..c {
                    let s: f64 = (0..r).map(|k| l[r * c + k] * v[k]).sum();
                    v[r] -= s;
                }
                // U⁻¹ (back substitution)
                for r in (0..c).rev() {
                    let s: f64 = (r + 1..c).map(|k| u[r * c + k] * v[k]).sum();
                    v[r] = (v[r] - s) / u[r * c + r];
                }
                for r in 0..c {
                    row[r * hw + p] = v[r];
                }
            }
            logdet[i] -= ld;
        }
        Ok(())
    }

    pub(crate) fn backward_batch(&self, input: &[f64], batch: &mut Batch<'_>, dlogdet: &[f64], grad: &mut [f64]) {
        let c = self.shape.channels;
        let hw = self.shape.spatial();
        let len = self.shape.len();
        let t = tri_len(c);
        let w = self.weight();
        let (l, u) = self.factors();

        // dW = Σ g xᵀ over rows and positions; g ← Wᵀ g.
        let mut dw = vec![0.0; c * c];
        let mut g = vec![0.0; c];
        let mut sum_dlogdet = 0.0;
        for i in 0..batch.n {
            let x = &input[i * len..(i + 1) * len];
            let row = batch.row(i, len);
            for p in 0..hw {
                for r in 0..c {
                    g[r] = row[r * hw + p];
                }
                for r in 0..c {
                    for k in 0..c {
                        dw[r * c + k] += g[r] * x[k * hw + p];
                    }
                }
                for k in 0..c {
                    row[k * hw + p] = (0..c).map(|r| w[r * c + k] * g[r]).sum();
                }
            }
            sum_dlogdet += dlogdet[i];
        }

        // W = P M with M = L U: dM = Pᵀ dW, dL = dM Uᵀ, dU = Lᵀ dM.
        let mut dm = vec![0.0; c * c];
        for r in 0..c {
            dm[self.perm[r] * c..(self.perm[r] + 1) * c].copy_from_slice(&dw[r * c..(r + 1) * c]);
        }
        let mut k = 0;
        for i in 0..c {
            for j in 0..i {
                grad[k] += (j..c).map(|m| dm[i * c + m] * u[j * c + m]).sum::<f64>();
                k += 1;
            }
        }
        let mut k = t;
        for i in 0..c {
            for j in i + 1..c {
                grad[k] += (i..c).map(|m| l[m * c + i] * dm[m * c + j]).sum::<f64>();
                k += 1;
            }
        }
        for i in 0..c {
            let d_u = (i..c).map(|m| l[m * c + i] * dm[m * c + i]).sum::<f64>();
            grad[2 * t + i] += d_u + sum_dlogdet * hw as f64 / u[i * c + i];
        }
    }
}

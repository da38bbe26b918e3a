use std::f64::consts::PI;

use super::Dataset;
use crate::error::{Error, Result};
use crate::flow::Shape;
use crate::rng::RngState;

/// Two interleaving half circles with Gaussian noise, standardized to zero
/// mean and unit variance per dimension.
///
/// The upper moon is `(cos t, sin t)`, the lower `(1 − cos t, 0.5 − sin t)`,
/// with `t ~ U[0, π)`; rows alternate between the two.
pub fn gen_two_moons(n: usize, noise_sd: f64, rng: &mut RngState) -> Result<Dataset> {
    check(n, noise_sd)?;
    let mut x = Vec::with_capacity(2 * n);
    for i in 0..n {
        let t = PI * rng.uniform();
        let (px, py) = if i % 2 == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        x.push(px + noise_sd * rng.normal());
        x.push(py + noise_sd * rng.normal());
    }
    let mut ds = Dataset::new(x, Shape::flat(2), format!("two_moons(n={n}, noise={noise_sd})"))?;
    ds.standardize();
    Ok(ds)
}

/// Concentric rings with radial Gaussian noise, standardized per dimension.
/// Rows cycle through the rings so each gets `n / radii.len()` points (±1).
pub fn gen_rings(n: usize, radii: &[f64], noise_sd: f64, rng: &mut RngState) -> Result<Dataset> {
    check(n, noise_sd)?;
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::domain("rings need at least one positive radius"));
    }
    let mut x = Vec::with_capacity(2 * n);
    for i in 0..n {
        let r = radii[i % radii.len()] + noise_sd * rng.normal();
        let t = 2.0 * PI * rng.uniform();
        x.push(r * t.cos());
        x.push(r * t.sin());
    }
    let mut ds = Dataset::new(x, Shape::flat(2), format!("rings(n={n}, radii={radii:?}, noise={noise_sd})"))?;
    ds.standardize();
    Ok(ds)
}

fn check(n: usize, noise_sd: f64) -> Result<()> {
    if n < 10 {
        return Err(Error::domain(format!("need at least 10 points, got {n}")));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::domain("noise_sd must be >= 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(ds: &Dataset) -> Vec<(f64, f64)> {
        let n = ds.len() as f64;
        (0..2)
            .map(|j| {
                let col: Vec<f64> = ds.x.iter().skip(j).step_by(2).copied().collect();
                let m = col.iter().sum::<f64>() / n;
                (m, col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n)
            })
            .collect()
    }

    #[test]
    fn moons_are_standardized_and_deterministic() {
        let a = gen_two_moons(1000, 0.1, &mut RngState::new(3)).unwrap();
        let b = gen_two_moons(1000, 0.1, &mut RngState::new(3)).unwrap();
        assert_eq!(a, b);
        for (m, v) in moments(&a) {
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        let inside = (0..a.len()).filter(|&i| a.row(i).iter().map(|v| v * v).sum::<f64>() < 16.0).count();
        assert!(inside as f64 >= 0.99 * a.len() as f64);
    }

    #[test]
    fn rings_are_standardized() {
        let ds = gen_rings(999, &[1.0, 2.0, 3.0], 0.05, &mut RngState::new(1)).unwrap();
        for (m, v) in moments(&ds) {
            assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
        }
        assert!(gen_rings(100, &[], 0.1, &mut RngState::new(1)).is_err());
        assert!(gen_two_moons(5, 0.1, &mut RngState::new(1)).is_err());
    }
}

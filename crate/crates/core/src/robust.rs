//! Penalty `ρ(ε) = −ln p(ε) + ln p(0)` and influence `ψ = dρ/dε` of the
//! one-dimensional base families.
//!
//! Unit scale means the densities as used by the flows: standard normal,
//! Laplace with `b = 1`, and Student's t with scale 1. The *standardized*
//! variants are rescaled to variance 1: t by `√((ν−2)/ν)` (requires `ν > 2`)
//! and Laplace by `b = 1/√2`. With scale `s`, `ρ_s(ε) = ρ(ε/s)` and
//! `ψ_s(ε) = ψ(ε/s)/s`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::base::BaseKind;
use crate::error::{Error, Result};
use crate::special::log_gamma;
use crate::svg::{self, Panel, Series, Stroke};

/// Scale that maps the unit-scale family to variance 1.
pub fn standard_scale(kind: BaseKind) -> Result<f64> {
    match kind {
        BaseKind::Gaussian => Ok(1.0),
        BaseKind::Laplace => Ok(std::f64::consts::FRAC_1_SQRT_2),
        BaseKind::StudentT { nu } if nu > 2.0 => Ok(((nu - 2.0) / nu).sqrt()),
        BaseKind::StudentT { nu } => Err(Error::domain(format!("t variance is undefined for nu = {nu} <= 2"))),
    }
}

fn check(kind: BaseKind) -> Result<()> {
    match kind {
        BaseKind::StudentT { nu } if !(nu > 0.0) || nu.is_nan() => Err(Error::domain(format!("nu must be > 0, got {nu}"))),
        _ => Ok(()),
    }
}

fn scale(kind: BaseKind, standardized: bool) -> Result<f64> {
    check(kind)?;
    if standardized {
        standard_scale(kind)
    } else {
        Ok(1.0)
    }
}

fn rho_unit(kind: BaseKind, e: f64) -> f64 {
    match kind {
        BaseKind::Gaussian => 0.5 * e * e,
        BaseKind::Laplace => e.abs(),
        BaseKind::StudentT { nu } => 0.5 * (nu + 1.0) * (e * e / nu).ln_1p(),
    }
}

fn psi_unit(kind: BaseKind, e: f64) -> f64 {
    match kind {
        BaseKind::Gaussian => e,
        BaseKind::Laplace => {
            if e == 0.0 {
                0.0
            } else {
                e.signum()
            }
        }
        BaseKind::StudentT { nu } => (nu + 1.0) * e / (nu + e * e),
    }
}

fn log_norm_unit(kind: BaseKind) -> Result<f64> {
    Ok(match kind {
        BaseKind::Gaussian => -0.5 * (2.0 * std::f64::consts::PI).ln(),
        BaseKind::Laplace => -std::f64::consts::LN_2,
        BaseKind::StudentT { nu } => {
            log_gamma(0.5 * (nu + 1.0))? - log_gamma(0.5 * nu)? - 0.5 * (nu * std::f64::consts::PI).ln()
        }
    })
}

/// `ρ(ε)`; zero at `ε = 0` by construction.
pub fn penalty(kind: BaseKind, eps: f64, standardized: bool) -> Result<f64> {
    let s = scale(kind, standardized)?;
    Ok(rho_unit(kind, eps / s))
}

/// `ψ(ε) = dρ/dε`. The Laplace influence at 0 is 0 by convention.
pub fn influence(kind: BaseKind, eps: f64, standardized: bool) -> Result<f64> {
    let s = scale(kind, standardized)?;
    Ok(psi_unit(kind, eps / s) / s)
}

/// Density `p(ε)`.
pub fn density(kind: BaseKind, eps: f64, standardized: bool) -> Result<f64> {
    let s = scale(kind, standardized)?;
    Ok((log_norm_unit(kind)? - rho_unit(kind, eps / s)).exp() / s)
}

/// Supremum of `|ψ|` over the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceBound {
    Bounded(f64),
    Unbounded,
}

impl InfluenceBound {
    pub fn value(self) -> Option<f64> {
        match self {
            InfluenceBound::Bounded(v) => Some(v),
            InfluenceBound::Unbounded => None,
        }
    }
}

/// `sup |ψ|` for the unit-scale family: unbounded for the Gaussian, 1 for
/// Laplace, and `(ν+1)/(2√ν)` (attained at `ε = √ν`) for Student's t.
pub fn influence_bound(kind: BaseKind) -> Result<InfluenceBound> {
    check(kind)?;
    Ok(match kind {
        BaseKind::Gaussian => InfluenceBound::Unbounded,
        BaseKind::Laplace => InfluenceBound::Bounded(1.0),
        BaseKind::StudentT { nu } => InfluenceBound::Bounded((nu + 1.0) / (2.0 * nu.sqrt())),
    })
}

/// Density, penalty and influence of one family on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyCurve {
    pub kind: BaseKind,
    pub standardized: bool,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub rho: Vec<f64>,
    pub psi: Vec<f64>,
}

impl PenaltyCurve {
    pub fn new(kind: BaseKind, grid: Vec<f64>, standardized: bool) -> Result<Self> {
        let mut density = Vec::with_capacity(grid.len());
        let mut rho = Vec::with_capacity(grid.len());
        let mut psi = Vec::with_capacity(grid.len());
        for &e in &grid {
            density.push(self::density(kind, e, standardized)?);
            rho.push(penalty(kind, e, standardized)?);
            psi.push(influence(kind, e, standardized)?);
        }
        Ok(Self { kind, standardized, grid, density, rho, psi })
    }

    /// `epsilon,density,penalty,influence` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,density,penalty,influence\n");
        for i in 0..self.grid.len() {
            s.push_str(&format!("{},{},{},{}\n", self.grid[i], self.density[i], self.rho[i], self.psi[i]));
        }
        s
    }
}

/// Symmetric grid for the penalty curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig1Spec {
    /// Student's t degrees of freedom (must exceed 2 when standardized).
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// Grid covers `[-half_width, half_width]`.
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    /// Number of grid points; odd counts include `ε = 0`.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Plotted range in the SVG, `[-plot_width, plot_width]`.
    #[serde(default = "default_plot_width")]
    pub plot_width: f64,
    #[serde(default = "default_true")]
    pub standardized: bool,
}

fn default_nu() -> f64 {
    10.0
}
fn default_half_width() -> f64 {
    40.0
}
fn default_points() -> usize {
    8001
}
fn default_plot_width() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}

impl Default for Fig1Spec {
    fn default() -> Self {
        Self {
            nu: default_nu(),
            half_width: default_half_width(),
            points: default_points(),
            plot_width: default_plot_width(),
            standardized: true,
        }
    }
}

impl Fig1Spec {
    pub fn grid(&self) -> Result<Vec<f64>> {
        if !(self.half_width > 0.0) || self.points < 3 {
            return Err(Error::config("fig1", "need half_width > 0 and at least 3 points"));
        }
        let h = 2.0 * self.half_width / (self.points - 1) as f64;
        // build the lower half and mirror it so the grid is exactly symmetric
        let lower: Vec<f64> = (0..self.points / 2).map(|i| -self.half_width + i as f64 * h).collect();
        let mut grid = lower.clone();
        if self.points % 2 == 1 {
            grid.push(0.0);
        }
        grid.extend(lower.iter().rev().map(|v| -v));
        Ok(grid)
    }

    pub fn kinds(&self) -> [BaseKind; 3] {
        [BaseKind::Gaussian, BaseKind::Laplace, BaseKind::StudentT { nu: self.nu }]
    }
}

/// Curves of the normal, Laplace and Student's t families.
pub fn fig1_curves(spec: &Fig1Spec) -> Result<Vec<PenaltyCurve>> {
    let grid = spec.grid()?;
    spec.kinds()
        .iter()
        .map(|k| PenaltyCurve::new(*k, grid.clone(), spec.standardized))
        .collect()
}

/// Three-panel SVG (density, penalty, influence) restricted to the plot range.
pub fn fig1_svg(curves: &[PenaltyCurve], plot_width: f64) -> String {
    let pick = |which: usize| -> Vec<Series> {
        curves
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let ys = [&c.density, &c.rho, &c.psi][which];
                let points = c
                    .grid
                    .iter()
                    .zip(ys)
                    .filter(|(e, _)| e.abs() <= plot_width)
                    .map(|(e, y)| (*e, *y))
                    .collect();
                let stroke = match c.kind {
                    BaseKind::Gaussian => Stroke::Dashed,
                    BaseKind::Laplace => Stroke::Dotted,
                    BaseKind::StudentT { .. } => Stroke::Solid,
                };
                let label = match c.kind {
                    BaseKind::StudentT { nu } => format!("Student's t (nu={nu})"),
                    k => k.name().to_string(),
                };
                Series { label, points, stroke, color: svg::PALETTE[i % svg::PALETTE.len()] }
            })
            .collect()
    };
    let rho_max = curves
        .iter()
        .filter(|c| !matches!(c.kind, BaseKind::Gaussian))
        .flat_map(|c| c.grid.iter().zip(&c.rho).filter(|(e, _)| e.abs() <= plot_width).map(|(_, r)| *r))
        .fold(0.0f64, f64::max);
    let panels = [
        Panel { title: "density".into(), x_label: "epsilon".into(), series: pick(0), y_range: None },
        Panel {
            title: "penalty rho".into(),
            x_label: "epsilon".into(),
            series: pick(1),
            y_range: Some((0.0, 1.5 * rho_max.max(1.0))),
        },
        Panel { title: "influence psi".into(), x_label: "epsilon".into(), series: pick(2), y_range: None },
    ];
    svg::render(&panels)
}

/// File stem used for a family's CSV.
pub fn curve_file_stem(kind: BaseKind) -> &'static str {
    kind.name()
}

/// Write one CSV per family plus `fig1.svg` into `dir`; returns the paths.
pub fn emit_fig1_curves(spec: &Fig1Spec, dir: impl AsRef<Path>) -> Result<(Vec<PenaltyCurve>, Vec<PathBuf>)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let curves = fig1_curves(spec)?;
    let mut paths = Vec::new();
    for c in &curves {
        let p = dir.join(format!("{}.csv", curve_file_stem(c.kind)));
        fs::write(&p, c.to_csv())?;
        paths.push(p);
    }
    let p = dir.join("fig1.svg");
    fs::write(&p, fig1_svg(&curves, spec.plot_width))?;
    paths.push(p);
    Ok((curves, paths))
}

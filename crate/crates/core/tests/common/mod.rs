//! Numerical helpers shared by the oracle and acceptance tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Trapezoid rule over samples `ys` on the sorted grid `xs`.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Two-sided Kolmogorov–Smirnov statistic of `samples` against `cdf`.
pub fn ks_statistic(mut samples: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Simpson over `[-l, l]` split into geometrically growing pieces so the
/// peak and the tails both get enough nodes.
pub fn integrate_line(f: &impl Fn(f64) -> f64, l: f64) -> f64 {
    let mut edges = vec![0.0, 1.0];
    while *edges.last().unwrap() < l {
        let next = (edges.last().unwrap() * 10.0).min(l);
        edges.push(next);
    }
    let half: f64 = edges.windows(2).map(|e| simpson(f, e[0], e[1], 20_000)).sum();
    let neg: f64 = edges.windows(2).map(|e| simpson(|x| f(-x), e[0], e[1], 20_000)).sum();
    half + neg
}

/// Whole real line through `x = tan θ`; the integrand stays finite at the
/// ends for every family whose density decays at least like `1/x²`.
pub fn integrate_tan(f: &impl Fn(f64) -> f64) -> f64 {
    let g = |t: f64| {
        let c = t.cos();
        if c.abs() < 1e-300 {
            return 0.0;
        }
        f(t.tan()) / (c * c)
    };
    let a = FRAC_PI_2 - 1e-9;
    simpson(g, -a, a, 400_000)
}

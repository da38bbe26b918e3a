//! Base distributions and special functions checked against independent
//! oracles: quadrature, closed-form moments, and statrs distributions.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};

use common::{integrate_line, integrate_tan, ks_statistic, mean_var, simpson};
use fatflow::base::{BaseDistribution, BaseKind};
use fatflow::special::{log_gamma, sample_chi_square};
use fatflow::RngState;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

fn pdf1(kind: BaseKind) -> impl Fn(f64) -> f64 {
    let b = BaseDistribution::new(kind, 1).unwrap();
    move |x| b.log_prob(&[x]).unwrap().exp()
}

const KINDS_1D: [BaseKind; 6] = [
    BaseKind::Gaussian,
    BaseKind::Laplace,
    BaseKind::StudentT { nu: 1.0 },
    BaseKind::StudentT { nu: 2.0 },
    BaseKind::StudentT { nu: 20.0 },
    BaseKind::StudentT { nu: 50.0 },
];

#[test]
fn normalization_on_minus_60_to_60() {
    // ν = 1 and ν = 2 put real mass beyond 60 (about 1e-2 and 3e-4), so they
    // are handled by the wider grids below.
    for kind in [BaseKind::Gaussian, BaseKind::Laplace, BaseKind::StudentT { nu: 20.0 }, BaseKind::StudentT { nu: 50.0 }] {
        let z = integrate_line(&pdf1(kind), 60.0);
        assert!((z - 1.0).abs() < 1e-6, "{kind}: {z}");
    }
}

#[test]
fn normalization_heavy_tails_documented_grids() {
    // ν = 1 on [-1e4, 1e4]: missing mass 2/(π·1e4) ≈ 6.4e-5, checked at 1e-3.
    let z = integrate_line(&pdf1(BaseKind::StudentT { nu: 1.0 }), 1e4);
    assert!((z - 1.0).abs() < 1e-3, "nu=1: {z}");
    // ν = 2 on [-1e4, 1e4]: missing mass ≈ 1/1e8.
    let z = integrate_line(&pdf1(BaseKind::StudentT { nu: 2.0 }), 1e4);
    assert!((z - 1.0).abs() < 1e-6, "nu=2: {z}");
}

#[test]
fn normalization_whole_line_tan_substitution() {
    for kind in KINDS_1D {
        let z = integrate_tan(&pdf1(kind));
        assert!((z - 1.0).abs() < 1e-6, "{kind}: {z}");
    }
    let z = integrate_tan(&pdf1(BaseKind::StudentT { nu: 1.5 }));
    assert!((z - 1.0).abs() < 1e-6, "nu=1.5: {z}");
}

#[test]
fn normalization_two_dims_polar() {
    // Radial integral of a spherically symmetric density; Laplace is not
    // spherical and uses a product grid instead.
    for nu in [3.0, 20.0] {
        let b = BaseDistribution::student_t(nu, 2).unwrap();
        let f = |t: f64| {
            let c = t.cos();
            if c.abs() < 1e-300 {
                return 0.0;
            }
            let r = t.tan();
            2.0 * PI * r * b.log_prob(&[r, 0.0]).unwrap().exp() / (c * c)
        };
        let z = simpson(f, 0.0, FRAC_PI_2 - 1e-9, 200_000);
        assert!((z - 1.0).abs() < 1e-6, "nu={nu}: {z}");
    }
    // Quarter plane times four keeps the kinks on the panel edges.
    let b = BaseDistribution::laplace(2).unwrap();
    let n = 2000;
    let z = 4.0 * simpson(|x| simpson(|y| b.log_prob(&[x, y]).unwrap().exp(), 0.0, 40.0, n), 0.0, 40.0, n);
    assert!((z - 1.0).abs() < 1e-6, "laplace 2d: {z}");
}

#[test]
fn gaussian_limit() {
    // Points lie on the first axis. Beyond |x| = 3 the exact gap
    // r²/(4ν) − D·r/(2ν) + D(D−2)/(4ν) (r = ‖x‖²) itself exceeds 1e-4 at ν = 1e6, so
    // there the gap is checked against that expansion instead.
    let nu = 1e6;
    for d in [1usize, 4] {
        let t = BaseDistribution::student_t(nu, d).unwrap();
        let g = BaseDistribution::gaussian(d).unwrap();
        for v in [0.0, 1.0, -1.0, 3.0, -3.0, 6.0, -6.0] {
            let mut x = vec![0.0; d];
            x[0] = v;
            let gap = t.log_prob(&x).unwrap() - g.log_prob(&x).unwrap();
            if v.abs() <= 3.0 {
                assert!(gap.abs() < 1e-4, "d={d} x={v}: {gap}");
            } else {
                let r = v * v;
                let d = d as f64;
                let want = (r * r - 2.0 * d * r + d * (d - 2.0)) / (4.0 * nu);
                assert!((gap - want).abs() < 1e-6, "d={d} x={v}: {gap} vs {want}");
            }
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = RngState::new(11);
    let h = 1e-5;
    for kind in [BaseKind::Gaussian, BaseKind::Laplace, BaseKind::StudentT { nu: 1.0 }, BaseKind::StudentT { nu: 7.5 }] {
        for d in [1usize, 3] {
            let b = BaseDistribution::new(kind, d).unwrap();
            for _ in 0..100 {
                // Laplace is evaluated away from its kink at 0.
                let x: Vec<f64> = (0..d)
                    .map(|_| {
                        let v = rng.uniform_range(-4.0, 4.0);
                        if kind == BaseKind::Laplace && v.abs() < 0.1 {
                            v + 0.2f64.copysign(v)
                        } else {
                            v
                        }
                    })
                    .collect();
                let g = b.grad_log_prob(&x).unwrap();
                for i in 0..d {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[i] += h;
                    m[i] -= h;
                    let fd = (b.log_prob(&p).unwrap() - b.log_prob(&m).unwrap()) / (2.0 * h);
                    let rel = (fd - g[i]).abs() / g[i].abs().max(1e-3);
                    assert!(rel < 1e-6, "{kind} d={d} x={x:?}: fd {fd} vs {}", g[i]);
                }
            }
        }
    }
}

#[test]
fn tails_are_ordered() {
    for d in [1usize, 2, 5] {
        let x: Vec<f64> = vec![10.0 / (d as f64).sqrt(); d];
        let g = BaseDistribution::gaussian(d).unwrap().log_prob(&x).unwrap();
        for nu in [1.0, 5.0, 50.0, 1000.0] {
            let t = BaseDistribution::student_t(nu, d).unwrap().log_prob(&x).unwrap();
            assert!(t > g, "d={d} nu={nu}");
        }
    }
}

#[test]
fn log_gamma_against_statrs_and_recurrence() {
    let mut a = 0.5;
    while a <= 1000.0 {
        let ours = log_gamma(a).unwrap();
        let theirs = statrs::function::gamma::ln_gamma(a);
        let err = (ours - theirs).abs() / theirs.abs().max(1.0);
        assert!(err < 1e-10, "a={a}: {ours} vs {theirs}");
        let rec = log_gamma(a + 1.0).unwrap() - ours - a.ln();
        assert!(rec.abs() < 1e-10 * ours.abs().max(1.0), "recurrence at {a}: {rec}");
        a *= 1.037;
    }
    assert!(log_gamma(0.0).is_err());
    assert!(log_gamma(-1.0).is_err());
}

#[test]
fn student_t_variance() {
    let mut rng = RngState::new(5);
    for nu in [5.0, 10.0] {
        let x = BaseDistribution::student_t(nu, 1).unwrap().sample(200_000, &mut rng);
        let (_, v) = mean_var(&x);
        let want = nu / (nu - 2.0);
        assert!((v / want - 1.0).abs() < 0.03, "nu={nu}: {v} vs {want}");
    }
}

#[test]
fn chi_square_moments() {
    let mut rng = RngState::new(6);
    for nu in [0.5, 2.0, 50.0] {
        let w = sample_chi_square(nu, 200_000, &mut rng).unwrap();
        let (m, v) = mean_var(&w);
        assert!((m - nu).abs() < 0.01 * nu + 0.02, "nu={nu}: mean {m}");
        assert!((v / (2.0 * nu) - 1.0).abs() < 0.04, "nu={nu}: var {v}");
    }
}

#[test]
fn mahalanobis_radius_is_f_distributed() {
    let (d, nu, n) = (3usize, 4.0, 200_000);
    let x = BaseDistribution::student_t(nu, d).unwrap().sample(n, &mut RngState::new(7));
    let r: Vec<f64> = x.chunks(d).map(|row| row.iter().map(|v| v * v).sum::<f64>() / d as f64).collect();
    let f = FisherSnedecor::new(d as f64, nu).unwrap();
    let ks = ks_statistic(r, |v| f.cdf(v));
    assert!(ks < 0.01, "KS {ks}");
}

#[test]
fn large_nu_samples_look_normal() {
    let x = BaseDistribution::student_t(1e6, 1).unwrap().sample(200_000, &mut RngState::new(8));
    let normal = Normal::new(0.0, 1.0).unwrap();
    let ks = ks_statistic(x, |v| normal.cdf(v));
    assert!(ks < 0.005, "KS {ks}");
}

fn any_kind() -> impl Strategy<Value = BaseKind> {
    prop_oneof![
        Just(BaseKind::Gaussian),
        Just(BaseKind::Laplace),
        (0.2f64..200.0).prop_map(|nu| BaseKind::StudentT { nu }),
    ]
}

proptest! {
    #[test]
    fn log_prob_is_symmetric_with_mode_at_zero(kind in any_kind(), x in prop::collection::vec(-50.0f64..50.0, 1..5)) {
        let b = BaseDistribution::new(kind, x.len()).unwrap();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let lp = b.log_prob(&x).unwrap();
        prop_assert!((lp - b.log_prob(&neg).unwrap()).abs() <= 1e-12 * lp.abs().max(1.0));
        prop_assert!(b.log_prob(&vec![0.0; x.len()]).unwrap() >= lp);
    }

    #[test]
    fn student_t_gradient_is_bounded(nu in 0.2f64..200.0, x in prop::collection::vec(-1e4f64..1e4, 1..5)) {
        let d = x.len() as f64;
        let g = BaseDistribution::student_t(nu, x.len()).unwrap().grad_log_prob(&x).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= (nu + d) / (2.0 * nu.sqrt()) * (1.0 + 1e-12));
    }
}

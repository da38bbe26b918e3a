//! Penalty and influence curves against finite differences, quadrature and
//! the base distribution gradients.

mod common;

use common::trapezoid;
use fatflow::base::{BaseDistribution, BaseKind};
use fatflow::robust::{density, emit_fig1_curves, influence, influence_bound, penalty, Fig1Spec, InfluenceBound};

fn families() -> Vec<BaseKind> {
    vec![
        BaseKind::Gaussian,
        BaseKind::Laplace,
        BaseKind::StudentT { nu: 1.0 },
        BaseKind::StudentT { nu: 3.0 },
        BaseKind::StudentT { nu: 50.0 },
    ]
}

fn dense_grid(half: f64, step: f64) -> Vec<f64> {
    let n = (half / step).round() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

#[test]
fn influence_bound_is_the_supremum() {
    for nu in [1.0, 20.0, 50.0, 1000.0] {
        let kind = BaseKind::StudentT { nu };
        let sup = dense_grid(100.0, 1e-3)
            .into_iter()
            .map(|e| influence(kind, e, false).unwrap().abs())
            .fold(0.0, f64::max);
        let InfluenceBound::Bounded(b) = influence_bound(kind).unwrap() else { panic!("t must be bounded") };
        assert!((sup - b).abs() < 1e-6, "nu={nu}: sup {sup} vs {b}");
        assert!((influence(kind, nu.sqrt(), false).unwrap() - b).abs() < 1e-12);
    }
    assert_eq!(influence_bound(BaseKind::Gaussian).unwrap(), InfluenceBound::Unbounded);
    assert_eq!(influence_bound(BaseKind::Laplace).unwrap().value(), Some(1.0));
}

#[test]
fn influence_is_derivative_of_penalty() {
    let h = 1e-5;
    for standardized in [false, true] {
        for kind in families() {
            if standardized && matches!(kind, BaseKind::StudentT { nu } if nu <= 2.0) {
                continue;
            }
            for e in dense_grid(40.0, 0.013) {
                if kind == BaseKind::Laplace && e.abs() < 2.0 * h {
                    continue;
                }
                let fd = (penalty(kind, e + h, standardized).unwrap() - penalty(kind, e - h, standardized).unwrap())
                    / (2.0 * h);
                let psi = influence(kind, e, standardized).unwrap();
                assert!((fd - psi).abs() < 1e-6, "{kind} std={standardized} e={e}: {fd} vs {psi}");
            }
        }
    }
}

#[test]
fn symmetry_and_zero_penalty() {
    for kind in families() {
        assert_eq!(penalty(kind, 0.0, false).unwrap(), 0.0);
        for e in dense_grid(30.0, 0.37) {
            assert_eq!(penalty(kind, e, false).unwrap(), penalty(kind, -e, false).unwrap());
            assert_eq!(influence(kind, e, false).unwrap(), -influence(kind, -e, false).unwrap());
        }
    }
}

#[test]
fn student_t_influence_redescends() {
    for nu in [1.0, 20.0, 50.0] {
        let kind = BaseKind::StudentT { nu };
        let peak = nu.sqrt();
        let up: Vec<f64> = dense_grid(peak, peak / 500.0).into_iter().filter(|e| *e >= 0.0).collect();
        for w in up.windows(2) {
            assert!(influence(kind, w[1], false).unwrap() > influence(kind, w[0], false).unwrap());
        }
        let mut prev = influence(kind, peak, false).unwrap();
        let mut e = peak;
        while e < 1e6 {
            e *= 1.1;
            let cur = influence(kind, e, false).unwrap();
            assert!(cur < prev, "nu={nu} e={e}");
            prev = cur;
        }
        assert!(prev < 1e-4 * (nu + 1.0));
    }
}

#[test]
fn influence_is_negated_base_gradient() {
    for kind in families() {
        let base = BaseDistribution::new(kind, 1).unwrap();
        for e in dense_grid(25.0, 0.11) {
            let g = base.grad_log_prob(&[e]).unwrap()[0];
            let psi = influence(kind, e, false).unwrap();
            assert!((psi + g).abs() <= 1e-12, "{kind} e={e}");
        }
    }
}

#[test]
fn penalty_matches_base_log_density() {
    for kind in families() {
        let base = BaseDistribution::new(kind, 1).unwrap();
        let top = base.log_prob(&[0.0]).unwrap();
        for e in dense_grid(25.0, 0.29) {
            let rho = top - base.log_prob(&[e]).unwrap();
            assert!((rho - penalty(kind, e, false).unwrap()).abs() < 1e-12 * rho.max(1.0), "{kind} e={e}");
            let p = base.log_prob(&[e]).unwrap().exp();
            assert!((p - density(kind, e, false).unwrap()).abs() < 1e-14, "{kind} e={e}");
        }
    }
}

#[test]
fn fig1_curves_are_standardized() {
    let dir = tempfile::tempdir().unwrap();
    let (curves, paths) = emit_fig1_curves(&Fig1Spec::default(), dir.path()).unwrap();
    assert_eq!(paths.len(), 4);
    for c in &curves {
        let mid = c.grid.len() / 2;
        assert_eq!(c.grid[mid], 0.0);
        assert_eq!(c.rho[mid], 0.0);
        let mass = trapezoid(&c.grid, &c.density);
        let second: Vec<f64> = c.grid.iter().zip(&c.density).map(|(e, p)| e * e * p).collect();
        let var = trapezoid(&c.grid, &second);
        assert!((mass - 1.0).abs() < 1e-4, "{}: mass {mass}", c.kind);
        assert!((var - 1.0).abs() < 1e-3, "{}: variance {var}", c.kind);
    }
    for p in &paths {
        let text = std::fs::read_to_string(p).unwrap();
        if p.extension().unwrap() == "csv" {
            let mut lines = text.lines();
            assert_eq!(lines.next().unwrap(), "epsilon,density,penalty,influence");
            let rows: Vec<Vec<f64>> =
                lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
            assert_eq!(rows.len(), 8001);
            assert!(rows.iter().all(|r| r.len() == 4 && r.iter().all(|v| v.is_finite())));
        } else {
            assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        }
    }
}

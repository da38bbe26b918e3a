//! Finite-difference oracles for the flow layers and model.

use fatflow::flow::{ActNorm, Activation, AffineCoupling, InvertibleLinear, Layer, Split, Squeeze};
use fatflow::{BaseDistribution, BaseKind, FlowModel, ModelSpec, RngState, Shape};
use nalgebra::DMatrix;

fn perturb(layer: &mut Layer, rng: &mut RngState, scale: f64) {
    for p in layer.params_mut() {
        *p += scale * rng.normal();
    }
}

/// `ln|det J|` of the layer's forward map by central differences.
fn numeric_logdet(layer: &Layer, x: &[f64]) -> f64 {
    let n = x.len();
    let h = 1e-5;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += h;
        xm[j] -= h;
        let (yp, _) = layer.forward(&xp).unwrap();
        let (ym, _) = layer.forward(&xm).unwrap();
        for i in 0..n {
            jac[(i, j)] = (yp[i] - ym[i]) / (2.0 * h);
        }
    }
    jac.determinant().abs().ln()
}

fn random_layers(rng: &mut RngState) -> Vec<(String, Layer)> {
    let mut out = Vec::new();
    for d in [1usize, 2, 3, 5, 8] {
        let s = Shape::flat(d);
        let mut an = ActNorm::new(s);
        an.set_initialized();
        let mut an = Layer::ActNorm(an);
        perturb(&mut an, rng, 0.5);
        out.push((format!("actnorm d={d}"), an));

        let mut lin = Layer::InvertibleLinear(InvertibleLinear::random_rotation(s, rng));
        perturb(&mut lin, rng, 0.2);
        out.push((format!("linear d={d}"), lin));

        for swap in [false, true] {
            for act in [Activation::Tanh, Activation::Relu] {
                let mut c = Layer::AffineCoupling(AffineCoupling::new(s, swap, 6, act, rng));
                perturb(&mut c, rng, 0.3);
                out.push((format!("coupling d={d} swap={swap} {act:?}"), c));
            }
        }
    }
    // image-shaped layers (D = 8)
    let img = Shape::image(2, 2, 2);
    let mut an = ActNorm::new(img);
    an.set_initialized();
    let mut an = Layer::ActNorm(an);
    perturb(&mut an, rng, 0.5);
    out.push(("actnorm 2x2x2".into(), an));
    let mut lin = Layer::InvertibleLinear(InvertibleLinear::random_rotation(img, rng));
    perturb(&mut lin, rng, 0.2);
    out.push(("linear 2x2x2".into(), lin));
    let mut c = Layer::AffineCoupling(AffineCoupling::new(img, true, 5, Activation::Tanh, rng));
    perturb(&mut c, rng, 0.3);
    out.push(("coupling 2x2x2".into(), c));
    out.push(("squeeze 2x2x2".into(), Layer::Squeeze(Squeeze::new(img).unwrap())));
    out
}

#[test]
fn analytic_logdet_matches_numeric_jacobian() {
    let mut rng = RngState::new(100);
    for (name, layer) in random_layers(&mut rng) {
        let d = layer.in_shape().len();
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let (_, ld) = layer.forward(&x).unwrap();
            let num = numeric_logdet(&layer, &x);
            assert!((ld - num).abs() < 1e-4, "{name}: analytic {ld} numeric {num}");
        }
    }
}

#[test]
fn layer_roundtrip_and_logdet_cancel() {
    let mut rng = RngState::new(101);
    for (name, layer) in random_layers(&mut rng) {
        let d = layer.in_shape().len();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
            let (y, ld_f) = layer.forward(&x).unwrap();
            let (back, ld_i) = layer.inverse(&y).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-6, "{name}: {a} vs {b}");
            }
            assert!((ld_f + ld_i).abs() < 1e-8, "{name}: {ld_f} + {ld_i}");
        }
    }
}

#[test]
fn identity_initialized_layers_are_identity() {
    let mut rng = RngState::new(102);
    let s = Shape::flat(4);
    let x = [0.5, -1.0, 2.0, 3.0];
    for layer in [
        Layer::AffineCoupling(AffineCoupling::new(s, false, 8, Activation::Tanh, &mut rng)),
        Layer::InvertibleLinear(InvertibleLinear::identity(s)),
    ] {
        let (y, ld) = layer.forward(&x).unwrap();
        assert_eq!(y, x.to_vec());
        assert_eq!(ld, 0.0);
    }
}

fn random_flat_model(d: usize, k: usize, kind: BaseKind, seed: u64) -> FlowModel {
    let mut m = FlowModel::new(&ModelSpec::flat(d, k, 5, kind), seed).unwrap();
    m.mark_initialized();
    let mut rng = RngState::new(seed + 1);
    m.update_params(|_, p| *p += 0.3 * rng.normal());
    m
}

fn mean_nll(model: &FlowModel, x: &[f64]) -> f64 {
    let ll = model.log_likelihood(x).unwrap();
    -ll.iter().sum::<f64>() / (ll.len() * model.dim()) as f64
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for kind in [BaseKind::Gaussian, BaseKind::StudentT { nu: 5.0 }, BaseKind::Laplace] {
        let model = random_flat_model(2, 2, kind, 7);
        let mut rng = RngState::new(8);
        let n = 16;
        let x: Vec<f64> = (0..n * 2).map(|_| rng.normal()).collect();
        let (_, tape) = model.log_likelihood_with_tape(&x).unwrap();
        let grad = model.backward(&tape, &vec![-1.0 / (n as f64 * 2.0); n]).unwrap();
        let params = model.params();
        let h = 1e-4;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let mut m = model.clone();
            let mut p = params.clone();
            p[i] += h;
            m.set_params(&p).unwrap();
            let up = mean_nll(&m, &x);
            p[i] -= 2.0 * h;
            m.set_params(&p).unwrap();
            let down = mean_nll(&m, &x);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{kind}: param {i}: fd {fd} analytic {}", grad[i]);
        }
        println!("{kind}: worst relative gradient error {worst:e}");
    }
}

#[test]
fn image_model_gradients_match_finite_differences() {
    let spec = ModelSpec {
        data_shape: Shape::image(1, 4, 4),
        steps: 1,
        levels: 2,
        hidden: 4,
        activation: Activation::Tanh,
        base: BaseKind::StudentT { nu: 20.0 },
    };
    let mut model = FlowModel::new(&spec, 3).unwrap();
    model.mark_initialized();
    let mut rng = RngState::new(4);
    model.update_params(|_, p| *p += 0.1 * rng.normal());
    let n = 4;
    let x: Vec<f64> = (0..n * 16).map(|_| rng.normal()).collect();
    let (_, tape) = model.log_likelihood_with_tape(&x).unwrap();
    let grad = model.backward(&tape, &vec![-1.0 / (n as f64 * 16.0); n]).unwrap();
    let params = model.params();
    let h = 1e-4;
    // every 3rd parameter keeps the sweep quick while touching every block
    for i in (0..params.len()).step_by(3) {
        let mut m = model.clone();
        let mut p = params.clone();
        p[i] += h;
        m.set_params(&p).unwrap();
        let up = mean_nll(&m, &x);
        p[i] -= 2.0 * h;
        m.set_params(&p).unwrap();
        let down = mean_nll(&m, &x);
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
        assert!(rel < 1e-4, "param {i}: fd {fd} analytic {}", grad[i]);
    }
}

#[test]
fn linear_diag_gradient_of_logdet_is_reciprocal() {
    // Zero data gradient isolates the log-det term: with dL/dloglik = 1 and
    // x = 0, dL/dU_ii = 1/U_ii for the identity-LU linear layer scaled on the diagonal.
    let s = Shape::flat(3);
    let mut lin = InvertibleLinear::identity(s);
    let n = lin.params().len();
    lin.params_mut()[n - 3..].copy_from_slice(&[2.0, -0.5, 4.0]);
    let base = BaseDistribution::gaussian(3).unwrap();
    let model = FlowModel::from_layers(vec![Layer::InvertibleLinear(lin)], base, s, 0).unwrap();
    let (_, tape) = model.log_likelihood_with_tape(&[0.0, 0.0, 0.0]).unwrap();
    let g = model.backward(&tape, &[1.0]).unwrap();
    assert_eq!(&g[n - 3..], &[0.5, -2.0, 0.25]);
}

#[test]
fn coupling_shift_gradient_is_mean_base_gradient_at_identity() {
    // identity-initialized model: shift gradient of the final coupling equals
    // the mean of dL/dz for the transformed coordinate
    let s = Shape::flat(2);
    let mut rng = RngState::new(5);
    let coupling = AffineCoupling::new(s, false, 3, Activation::Tanh, &mut rng);
    let base = BaseDistribution::gaussian(2).unwrap();
    let model = FlowModel::from_layers(vec![Layer::AffineCoupling(coupling)], base, s, 0).unwrap();
    let x = [1.0, 0.5, -1.0, -0.5, 1.0, 2.0, -1.0, -2.0];
    let n = 4;
    let c = -1.0 / (n as f64 * 2.0);
    let (_, tape) = model.log_likelihood_with_tape(&x).unwrap();
    let g = model.backward(&tape, &vec![c; n]).unwrap();
    // b3 layout: [shift, pre]; shift bias is at len - 2
    let shift_grad = g[g.len() - 2];
    let expected: f64 = x.chunks(2).map(|r| c * (-r[1])).sum();
    assert!((shift_grad - expected).abs() < 1e-15);
    // symmetric data: the mean base gradient vanishes
    assert!(shift_grad.abs() < 1e-15);
}

#[test]
fn model_roundtrip_random_inputs() {
    let spec = ModelSpec {
        data_shape: Shape::image(2, 4, 4),
        steps: 2,
        levels: 2,
        hidden: 6,
        activation: Activation::Tanh,
        base: BaseKind::Gaussian,
    };
    let mut model = FlowModel::new(&spec, 11).unwrap();
    let mut rng = RngState::new(12);
    let init: Vec<f64> = (0..64 * 32).map(|_| rng.normal()).collect();
    model.data_init(&init).unwrap();
    model.update_params(|_, p| *p += 0.05 * rng.normal());
    let x: Vec<f64> = (0..1000 * 32).map(|_| rng.normal()).collect();
    let (z, ld) = model.to_latent(&x).unwrap();
    let (back, ld_inv) = model.inverse(&z).unwrap();
    let worst = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-5, "{worst}");
    for (a, b) in ld.iter().zip(&ld_inv) {
        assert!((a + b).abs() < 1e-8);
    }
    // split layers are exercised by the model-level inverse
    let _ = Split::new(Shape::image(2, 1, 1)).unwrap();
}

#[test]
fn log_likelihood_is_base_plus_logdets() {
    let model = random_flat_model(3, 3, BaseKind::StudentT { nu: 4.0 }, 21);
    let mut rng = RngState::new(22);
    let x: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
    let ll = model.log_likelihood(&x).unwrap();
    for (row, l) in x.chunks(3).zip(&ll) {
        let mut v = row.to_vec();
        let mut total = 0.0;
        for layer in model.layers() {
            let (y, ld) = layer.forward(&v).unwrap();
            v = y;
            total += ld;
        }
        total += model.base().log_prob(&v).unwrap();
        assert!((total - l).abs() < 1e-10);
    }
}

#[test]
fn two_d_density_integrates_to_one() {
    let model = random_flat_model(2, 2, BaseKind::StudentT { nu: 20.0 }, 31);
    // midpoint rule on [-B, B]² (t tails make the box large)
    let b = 40.0;
    let m = 800;
    let h = 2.0 * b / m as f64;
    let mut pts = Vec::with_capacity(m * m * 2);
    for i in 0..m {
        for j in 0..m {
            pts.push(-b + (i as f64 + 0.5) * h);
            pts.push(-b + (j as f64 + 0.5) * h);
        }
    }
    let total: f64 = model.log_likelihood(&pts).unwrap().iter().map(|l| l.exp()).sum::<f64>() * h * h;
    assert!((total - 1.0).abs() < 2e-2, "{total}");
}

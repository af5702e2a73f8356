use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::testutil::{check, probe};

type F = f64;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<F> {
    Tensor::randn(shape, rng)
}

const TOL: f64 = 1e-4;

#[test]
fn conv1d_identity_kernel() {
    let x = Tensor::<F>::from_f64(&[2, 4], &[1., 2., 3., 4., -1., 0.5, 2., 8.]).unwrap();
    let w = Tensor::from_f64(&[2, 2, 1], &[1., 0., 0., 1.]).unwrap();
    let b = Tensor::zeros(&[2]);
    let y = Var::constant(x.clone())
        .conv1d(&Var::constant(w), Some(&Var::constant(b)), 1, 0)
        .unwrap();
    assert_eq!(y.value(), &x);
}

#[test]
fn conv1d_hand_cross_correlation() {
    let x = Tensor::<F>::from_f64(&[1, 3], &[1., 2., 3.]).unwrap();
    let w = Tensor::from_f64(&[1, 1, 3], &[1., 1., 1.]).unwrap();
    let y = Var::constant(x)
        .conv1d(&Var::constant(w), None, 1, 1)
        .unwrap();
    assert_eq!(y.value().data(), &[3., 6., 5.]);
}

#[test]
fn conv1d_is_cross_correlation_not_convolution() {
    let x = Tensor::<F>::from_f64(&[1, 3], &[0., 1., 0.]).unwrap();
    let w = Tensor::from_f64(&[1, 1, 3], &[1., 2., 3.]).unwrap();
    let y = Var::constant(x)
        .conv1d(&Var::constant(w), None, 1, 1)
        .unwrap();
    assert_eq!(y.value().data(), &[3., 2., 1.]);
}

#[test]
fn conv1d_gradients() {
    let mut r = rng();
    for &(dil, k) in &[(1, 3), (2, 3), (4, 3), (1, 1)] {
        let pad = dil * (k - 1) / 2;
        let inputs = [
            randn(&[3, 11], &mut r),
            randn(&[4, 3, k], &mut r),
            randn(&[4], &mut r),
        ];
        let err = check(&inputs, |v| {
            probe(&v[0].conv1d(&v[1], Some(&v[2]), dil, pad).unwrap(), 1)
        });
        assert!(err < TOL, "dilation {dil} k {k}: {err}");
    }
}

#[test]
fn conv1d_shape_errors() {
    let x = Var::<F>::constant(Tensor::zeros(&[2, 5]));
    let w = Var::constant(Tensor::zeros(&[3, 4, 3]));
    match x.conv1d(&w, None, 1, 1) {
        Err(crate::Error::Shape { got, .. }) => assert_eq!(got, vec![3, 4, 3]),
        other => panic!("expected shape error, got {other:?}"),
    }
    assert!(x
        .conv1d(&Var::constant(Tensor::zeros(&[3, 2, 3])), None, 0, 1)
        .is_err());
}

#[test]
fn conv_transpose2d_scalar_case() {
    let x = Var::<F>::constant(Tensor::from_f64(&[1, 1, 1], &[3.0]).unwrap());
    let w = Var::constant(Tensor::from_f64(&[1, 1, 1, 1], &[-0.5]).unwrap());
    let y = x.conv_transpose2d(&w, (1, 1)).unwrap();
    assert_eq!(y.value().data(), &[-1.5]);
}

#[test]
fn conv_transpose2d_extents_and_gradients() {
    let mut r = rng();
    let inputs = [randn(&[2, 3, 4], &mut r), randn(&[2, 3, 3, 5], &mut r)];
    let y = Var::constant(inputs[0].clone())
        .conv_transpose2d(&Var::constant(inputs[1].clone()), (2, 3))
        .unwrap();
    assert_eq!(y.shape(), &[3, (3 - 1) * 2 + 3, (4 - 1) * 3 + 5]);
    let err = check(&inputs, |v| {
        probe(&v[0].conv_transpose2d(&v[1], (2, 3)).unwrap(), 2)
    });
    assert!(err < TOL, "{err}");
    assert!(Var::constant(inputs[0].clone())
        .conv_transpose2d(&Var::constant(inputs[1].clone()), (0, 1))
        .is_err());
}

#[test]
fn linear_examples_and_gradients() {
    let x = Var::<F>::constant(Tensor::from_f64(&[1, 2], &[1., 2.]).unwrap());
    let eye = Var::constant(Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap());
    let zero = Var::constant(Tensor::zeros(&[2]));
    assert_eq!(
        x.linear(&eye, Some(&zero)).unwrap().value().data(),
        &[1., 2.]
    );
    // rows of w: [1,1] and [0,1]
    let w = Var::constant(Tensor::from_f64(&[2, 2], &[1., 1., 0., 1.]).unwrap());
    assert_eq!(x.linear(&w, Some(&zero)).unwrap().value().data(), &[3., 2.]);
    assert!(x
        .linear(&Var::constant(Tensor::zeros(&[2, 3])), None)
        .is_err());

    let mut r = rng();
    let inputs = [
        randn(&[3, 5], &mut r),
        randn(&[4, 5], &mut r),
        randn(&[4], &mut r),
    ];
    let err = check(&inputs, |v| {
        probe(&v[0].linear(&v[1], Some(&v[2])).unwrap(), 3)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn cross_entropy_examples() {
    let uniform = Var::<F>::constant(Tensor::zeros(&[1, 4]));
    let l = uniform.cross_entropy(&[2]).unwrap().value().item();
    assert!((l - 4f64.ln()).abs() < 1e-12);

    let logits = Var::<F>::constant(Tensor::from_f64(&[1, 4], &[2., 0., 0., 0.]).unwrap());
    let l = logits.cross_entropy(&[0]).unwrap().value().item();
    let expected = (2f64.exp() + 3.0).ln() - 2.0;
    assert!((l - expected).abs() < 1e-12);
    assert!((l - 0.34076).abs() < 1e-5);

    let two =
        Var::<F>::constant(Tensor::from_f64(&[2, 4], &[2., 0., 0., 0., 2., 0., 0., 0.]).unwrap());
    let l2 = two.cross_entropy(&[0, 0]).unwrap().value().item();
    assert!((l2 - l).abs() < 1e-12);

    assert!(logits.cross_entropy(&[4]).is_err());
    assert!(logits.cross_entropy(&[]).is_err());
}

#[test]
fn cross_entropy_gradients_and_stability() {
    let mut r = rng();
    let inputs = [randn(&[3, 4], &mut r)];
    let err = check(&inputs, |v| v[0].cross_entropy(&[0, 3, 1]).unwrap());
    assert!(err < TOL, "{err}");
    let big = Var::<f32>::constant(Tensor::from_f64(&[1, 3], &[1000., 0., -1000.]).unwrap());
    let l = big.cross_entropy(&[1]).unwrap().value().item();
    assert!(l.is_finite() && (l - 1000.0).abs() < 1e-3);
}

#[test]
fn gradient_reverse_flips_sign() {
    let x = Tensor::<F>::from_f64(&[3], &[0.5, -2., 4.]).unwrap();
    let v = Var::leaf(x.clone());
    let y = v.gradient_reverse(1.0);
    assert_eq!(y.value(), &x);
    let g = Tensor::from_f64(&[3], &[1., 2., -3.]).unwrap();
    let grads = y.backward_with(g.clone());
    assert_eq!(grads.wrt(&v), g.map(|a| -a));

    let y0 = v.gradient_reverse(0.0).sum();
    assert!(y0.backward().wrt(&v).data().iter().all(|&a| a == 0.0));
}

#[test]
fn gradient_reverse_composition_identity() {
    // f = tanh(W1 x); L = CE(W2 f, y) + λ·CE(Wd grl(f), d).
    let mut r = rng();
    let x = Var::constant(randn(&[1, 5], &mut r));
    let w1 = randn(&[6, 5], &mut r);
    let w2 = Var::constant(randn(&[4, 6], &mut r));
    let wd = Var::constant(randn(&[2, 6], &mut r));
    let lambda = 0.7;

    let feature = |w1: &Var<F>| x.linear(w1, None).unwrap().tanh();
    let ce = |f: &Var<F>| f.linear(&w2, None).unwrap().cross_entropy(&[2]).unwrap();
    let dis = |f: &Var<F>| f.linear(&wd, None).unwrap().cross_entropy(&[1]).unwrap();

    // Analytic gradient at f through the reversal.
    let w1v = Var::constant(w1.clone());
    let f = Var::leaf(feature(&w1v).value().clone());
    let total = ce(&f)
        .add(&dis(&f.gradient_reverse(1.0)).scale(lambda))
        .unwrap();
    let g_total = total.backward().wrt(&f);

    // Numeric ∂L_CE/∂f − λ ∂L_Dis/∂f.
    let h = 1e-3;
    for i in 0..6 {
        let at = |delta: f64| {
            let mut t = f.value().clone();
            t.data_mut()[i] += delta;
            Var::constant(t)
        };
        let d_ce = (ce(&at(h)).value().item() - ce(&at(-h)).value().item()) / (2.0 * h);
        let d_dis = (dis(&at(h)).value().item() - dis(&at(-h)).value().item()) / (2.0 * h);
        let expected = d_ce - lambda * d_dis;
        let got = g_total.data()[i];
        let rel = (got - expected).abs() / got.abs().max(expected.abs()).max(1e-3);
        assert!(rel < TOL, "component {i}: {got} vs {expected}");
    }

    // The loss value itself is unaffected by the reversal.
    let plain = ce(&f).add(&dis(&f).scale(lambda)).unwrap().value().item();
    assert_eq!(plain, total.value().item());
}

#[test]
fn elementwise_and_activation_gradients() {
    let mut r = rng();
    let inputs = [randn(&[3, 4], &mut r), randn(&[3, 4], &mut r)];
    type Case = (&'static str, Box<dyn Fn(&[Var<F>]) -> Var<F>>);
    let cases: Vec<Case> = vec![
        ("add", Box::new(|v| probe(&v[0].add(&v[1]).unwrap(), 4))),
        ("sub", Box::new(|v| probe(&v[0].sub(&v[1]).unwrap(), 4))),
        ("mul", Box::new(|v| probe(&v[0].mul(&v[1]).unwrap(), 4))),
        ("scale", Box::new(|v| probe(&v[0].scale(-2.5), 4))),
        ("tanh", Box::new(|v| probe(&v[0].tanh(), 4))),
        ("sigmoid", Box::new(|v| probe(&v[0].sigmoid(), 4))),
        ("swish", Box::new(|v| probe(&v[0].swish(), 4))),
        ("relu", Box::new(|v| probe(&v[0].relu(), 4))),
        ("leaky", Box::new(|v| probe(&v[0].leaky_relu(0.4), 4))),
        ("softmax", Box::new(|v| probe(&v[0].softmax(), 4))),
        ("mean_rows", Box::new(|v| probe(&v[0].mean_rows(), 4))),
        ("mean", Box::new(|v| v[0].mul(&v[1]).unwrap().mean())),
        (
            "transpose",
            Box::new(|v| probe(&v[0].transpose().unwrap(), 4)),
        ),
        (
            "reshape",
            Box::new(|v| probe(&v[0].reshape(&[2, 6]).unwrap(), 4)),
        ),
        (
            "narrow0",
            Box::new(|v| probe(&v[0].narrow(0, 1, 2).unwrap(), 4)),
        ),
        (
            "narrow1",
            Box::new(|v| probe(&v[0].narrow(1, 1, 3).unwrap(), 4)),
        ),
        (
            "mse",
            Box::new(|v| v[0].mse(&Tensor::full(&[3, 4], 0.3)).unwrap()),
        ),
        (
            "gather",
            Box::new(|v| {
                let idx: Rc<[usize]> = vec![0, 5, 5, 11, 3].into();
                probe(&v[0].gather(idx, &[5]).unwrap(), 4)
            }),
        ),
    ];
    for (name, f) in cases {
        let err = check(&inputs, f);
        assert!(err < TOL, "{name}: {err}");
    }
}

#[test]
fn add_channel_gradients() {
    let mut r = rng();
    let inputs = [randn(&[3, 7], &mut r), randn(&[3], &mut r)];
    let err = check(&inputs, |v| probe(&v[0].add_channel(&v[1]).unwrap(), 5));
    assert!(err < TOL, "{err}");
}

#[test]
fn layer_norm_gradients() {
    let mut r = rng();
    let inputs = [
        randn(&[4, 6], &mut r),
        randn(&[6], &mut r),
        randn(&[6], &mut r),
    ];
    let err = check(&inputs, |v| {
        probe(&v[0].layer_norm(&v[1], &v[2], 1e-5).unwrap(), 6)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn attention_gradients() {
    let mut r = rng();
    let inputs = [
        randn(&[5, 8], &mut r),
        randn(&[5, 8], &mut r),
        randn(&[5, 8], &mut r),
    ];
    for heads in [1, 2, 4] {
        let err = check(&inputs, |v| {
            probe(&Var::attention(&v[0], &v[1], &v[2], heads).unwrap(), 7)
        });
        assert!(err < TOL, "heads {heads}: {err}");
    }
}

#[test]
fn attention_rows_are_convex_combinations() {
    let mut r = rng();
    let q = Var::<F>::constant(randn(&[4, 6], &mut r));
    let k = Var::constant(randn(&[4, 6], &mut r));
    let v = Var::constant(Tensor::ones(&[4, 6]));
    let out = Var::attention(&q, &k, &v, 3).unwrap();
    assert!(out.value().data().iter().all(|&a| (a - 1.0).abs() < 1e-12));
}

#[test]
fn shared_subexpressions_accumulate() {
    let x = Var::<F>::leaf(Tensor::from_f64(&[2], &[1.5, -2.0]).unwrap());
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum();
    let g = y.backward().wrt(&x);
    assert_eq!(g.data(), &[2.0 * 1.5 + 1.0, 2.0 * -2.0 + 1.0]);
}

#[test]
fn constants_record_no_graph() {
    let x = Var::<F>::constant(Tensor::ones(&[3]));
    let y = x.tanh().sum();
    assert!(!y.requires_grad());
    assert!(y.backward().get(&x).is_none());
}

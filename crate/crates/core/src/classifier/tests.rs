use super::*;
use crate::corpus::{Label, Split};
use crate::testutil::{check_params, probe};
use crate::toy::{toy_classifier_config, two_domain_set};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn tiny() -> ClassifierConfig {
    ClassifierConfig {
        frames: 6,
        n_mels: 4,
        patch_time: 2,
        patch_freq: 2,
        embed_dim: 4,
        depth: 1,
        heads: 2,
        mlp_hidden: 6,
    }
}

fn zero_heads<T: Real>(m: &mut Classifier<T>) {
    for p in m.params.iter_mut() {
        if p.name.contains("_head.") {
            p.value = Tensor::zeros(p.value.shape());
        }
    }
}

#[test]
fn lambda_schedule_values() {
    assert_eq!(lambda_schedule(0.0, 10.0).unwrap(), 0.0);
    assert!((lambda_schedule(1.0, 10.0).unwrap() - 0.999909).abs() < 1e-6);
    assert!((lambda_schedule(0.5, 10.0).unwrap() - 0.98661).abs() < 1e-5);
    let mut prev = -1.0;
    for i in 0..=20 {
        let l = lambda_schedule(i as f64 / 20.0, 10.0).unwrap();
        assert!(l > prev);
        prev = l;
    }
    assert!(lambda_schedule(1.01, 10.0).is_err());
    assert!(lambda_schedule(-0.1, 10.0).is_err());
}

#[test]
fn config_rules() {
    assert!(ClassifierConfig::desk().validate().is_ok());
    assert!(ClassifierConfig { depth: 0, ..tiny() }.validate().is_err());
    assert!(ClassifierConfig { heads: 3, ..tiny() }.validate().is_err());
    assert!(ClassifierConfig {
        frames: 1,
        ..tiny()
    }
    .validate()
    .is_err());
    // 501 frames trim to 31 whole patches in time.
    assert_eq!(ClassifierConfig::desk().max_patches(), 31 * 8);
}

#[test]
fn encode_is_deterministic_and_sized() {
    let m = Classifier::<f32>::new(tiny(), &mut rng(1)).unwrap();
    let x = Tensor::randn(&[7, 4], &mut rng(2));
    let a = m.embed(&x).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a, m.embed(&x).unwrap());
    assert!(m.embed(&Tensor::zeros(&[1, 4])).is_err());
    assert!(m.embed(&Tensor::zeros(&[6, 5])).is_err());
    // Shorter inputs use a prefix of the position table.
    assert_eq!(
        m.embed(&Tensor::randn(&[2, 4], &mut rng(3))).unwrap().len(),
        4
    );
}

#[test]
fn encode_gradients_match_finite_differences() {
    let m = Classifier::<f64>::new(tiny(), &mut rng(4)).unwrap();
    let x = Tensor::randn(&[6, 4], &mut rng(5));
    let err = check_params(
        &m.params,
        |_| true,
        vec![x],
        |p, v| probe(&m.encode(p, &v[0]).unwrap(), 6),
    );
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn reversal_composition_at_the_embedding() {
    let m = Classifier::<f64>::new(tiny(), &mut rng(9)).unwrap();
    let emb = Tensor::randn(&[1, 4], &mut rng(10));
    let (y, d, lambda) = (1, 0, 0.6);
    let p = m.params.bind(false);
    let ce = |e: &Var<f64>| {
        m.heads_from_embedding(&p, e.clone())
            .unwrap()
            .label_logits
            .cross_entropy(&[y])
            .unwrap()
    };
    let dis = |e: &Var<f64>| {
        m.heads_from_embedding(&p, e.clone())
            .unwrap()
            .domain_logits
            .cross_entropy(&[d])
            .unwrap()
    };
    let leaf = Var::leaf(emb.clone());
    let total = ce(&leaf).add(&dis(&leaf).scale(lambda)).unwrap();
    let analytic = total.backward().wrt(&leaf);
    let h = 1e-5;
    for i in 0..4 {
        let at = |delta: f64, f: &dyn Fn(&Var<f64>) -> Var<f64>| {
            let mut t = emb.clone();
            t.data_mut()[i] += delta;
            f(&Var::constant(t)).value().item()
        };
        let dce = (at(h, &ce) - at(-h, &ce)) / (2.0 * h);
        let ddis = (at(h, &dis) - at(-h, &dis)) / (2.0 * h);
        let expected = dce - lambda * ddis;
        let a = analytic.data()[i];
        let rel = (a - expected).abs() / a.abs().max(expected.abs()).max(1e-3);
        assert!(rel < 1e-4, "component {i}: {a} vs {expected}");
    }
}

#[test]
fn domain_head_descends_its_own_loss() {
    let m = Classifier::<f64>::new(tiny(), &mut rng(11)).unwrap();
    let x = Tensor::randn(&[6, 4], &mut rng(12));
    let lambda = 0.8;
    let err = check_params(
        &m.params,
        |n| n.starts_with("domain_head"),
        vec![],
        |p, _| {
            let h = m.heads(p, &Var::constant(x.clone())).unwrap();
            h.domain_logits.cross_entropy(&[1]).unwrap().scale(lambda)
        },
    );
    assert!(err < 1e-4, "rel err {err}");
}

#[test]
fn encoder_gradient_is_ce_minus_lambda_dis() {
    let m = Classifier::<f64>::new(tiny(), &mut rng(13)).unwrap();
    let x = Tensor::randn(&[6, 4], &mut rng(14));
    let lambda = 0.5;
    let err = check_params(
        &m.params,
        |n| !n.contains("_head"),
        vec![],
        |p, _| {
            let h = m.heads(p, &Var::constant(x.clone())).unwrap();
            // FD target: L_CE − λ·L_Dis through an un-reversed discriminator.
            let dis = m
                .discriminate(p, &h.embedding)
                .unwrap()
                .cross_entropy(&[0])
                .unwrap();
            h.label_logits
                .cross_entropy(&[3])
                .unwrap()
                .sub(&dis.scale(lambda))
                .unwrap()
        },
    );
    assert!(err < 1e-4, "rel err {err}");
    // And the AFT objective's analytic encoder gradient equals it.
    let batch = [(&x, 3, 0)];
    let (_, aft) = m.aft_loss(&batch, lambda, Exec::Sequential).unwrap();
    let p = m.params.bind(true);
    let h = m.heads(&p, &Var::constant(x.clone())).unwrap();
    let dis = m
        .discriminate(&p, &h.embedding)
        .unwrap()
        .cross_entropy(&[0])
        .unwrap();
    let target = h
        .label_logits
        .cross_entropy(&[3])
        .unwrap()
        .sub(&dis.scale(lambda))
        .unwrap();
    let plain = p.grads(&target.backward());
    for ((param, a), b) in m.params.iter().zip(&aft).zip(&plain) {
        if !param.name.contains("_head") {
            assert!(a.max_abs_diff(b) < 1e-12, "{}", param.name);
        }
    }
}

#[test]
fn uniform_heads_give_ln8() {
    let mut m = Classifier::<f64>::new(tiny(), &mut rng(15)).unwrap();
    zero_heads(&mut m);
    let x = Tensor::randn(&[6, 4], &mut rng(16));
    let (l, _) = m.aft_loss(&[(&x, 2, 1)], 1.0, Exec::Sequential).unwrap();
    assert!((l.l_ce - 4f64.ln()).abs() < 1e-12);
    assert!((l.l_dis - 2f64.ln()).abs() < 1e-12);
    assert!((l.l_final - 8f64.ln()).abs() < 1e-12);
    assert_eq!(l.l_final, l.l_ce + l.lambda * l.l_dis);
}

#[test]
fn lambda_zero_is_plain_classification() {
    let m = Classifier::<f32>::new(tiny(), &mut rng(17)).unwrap();
    let xs: Vec<Tensor<f32>> = (0..3)
        .map(|i| Tensor::randn(&[6, 4], &mut rng(20 + i)))
        .collect();
    let batch: Vec<_> = xs
        .iter()
        .zip([0, 1, 3])
        .map(|(x, y)| (x, y, y % 2))
        .collect();
    let (l, g) = m.aft_loss(&batch, 0.0, Exec::Sequential).unwrap();
    assert_eq!(l.l_final, l.l_ce);
    let mut plain: Vec<Vec<Tensor<f32>>> = Vec::new();
    for &(x, y, _) in &batch {
        let p = m.params.bind(true);
        let logits = m
            .label_head
            .forward(&p, &m.encode(&p, &Var::constant(x.clone())).unwrap())
            .unwrap();
        plain.push(p.grads(&logits.cross_entropy(&[y]).unwrap().backward()));
    }
    let mut plain = sum_grads(plain).unwrap();
    plain.iter_mut().for_each(|t| t.scale_assign(1.0 / 3.0));
    assert_eq!(g, plain);
    for (param, t) in m.params.iter().zip(&g) {
        if param.name.starts_with("domain_head") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn aft_loss_rejects_bad_batches() {
    let m = Classifier::<f32>::new(tiny(), &mut rng(18)).unwrap();
    let x = Tensor::zeros(&[6, 4]);
    assert!(m.aft_loss(&[], 0.5, Exec::Sequential).is_err());
    assert!(m.aft_loss(&[(&x, 4, 0)], 0.5, Exec::Sequential).is_err());
    assert!(m.aft_loss(&[(&x, 0, 2)], 0.5, Exec::Sequential).is_err());
    assert!(m.aft_loss(&[(&x, 0, 0)], -1.0, Exec::Sequential).is_err());
}

#[test]
fn parallel_matches_sequential() {
    let m = Classifier::<f32>::new(tiny(), &mut rng(19)).unwrap();
    let xs: Vec<Tensor<f32>> = (0..5)
        .map(|i| Tensor::randn(&[6, 4], &mut rng(30 + i)))
        .collect();
    let batch: Vec<_> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| (x, i % 4, i % 2))
        .collect();
    let a = m.aft_loss(&batch, 0.3, Exec::Sequential).unwrap();
    let b = m.aft_loss(&batch, 0.3, Exec::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn predict_shape_and_determinism() {
    let m = Classifier::<f32>::new(tiny(), &mut rng(21)).unwrap();
    let x = Tensor::randn(&[6, 4], &mut rng(22));
    let logits = m.predict(&x).unwrap();
    assert_eq!(logits.len(), 4);
    assert_eq!(logits, m.predict(&x).unwrap());
    let shifted: Vec<f64> = logits.iter().map(|v| v + 3.5).collect();
    assert_eq!(argmax(&logits), argmax(&shifted));
}

#[test]
fn checkpoint_round_trip() {
    let m = Classifier::<f32>::new(tiny(), &mut rng(23)).unwrap();
    let bytes = m.to_checkpoint().unwrap().to_bytes();
    let back = Classifier::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.params, m.params);
}

fn quick_cfg(aft: bool, gamma: f64) -> ClassifierTrainConfig {
    ClassifierTrainConfig {
        epochs: 3,
        batch_size: 16,
        adam: AdamConfig::with_lr(1e-3),
        aft,
        gamma,
        seed: 5,
    }
}

#[test]
fn training_is_deterministic_and_lambda_zero_matches_plain() {
    let data = two_domain_set(64, 1);
    let run = |cfg: &ClassifierTrainConfig| {
        let mut m = Classifier::<f32>::new(toy_classifier_config(), &mut rng(cfg.seed)).unwrap();
        let out = train(&mut m, &data, None, cfg, Exec::default(), |_| {}).unwrap();
        (m.params, out.log)
    };
    let (a, log) = run(&quick_cfg(true, 10.0));
    assert_eq!(log.len(), 3);
    for e in &log {
        assert_eq!(e.l_final, e.l_ce + e.lambda * e.l_dis);
        assert!(e.se.is_none());
    }
    assert_eq!(log[0].lambda, 0.0);
    assert!(log[2].lambda > log[1].lambda);
    assert_eq!(a, run(&quick_cfg(true, 10.0)).0);
    // A schedule that never leaves zero is plain fine-tuning.
    let (plain, plain_log) = run(&quick_cfg(false, 10.0));
    assert!(plain_log.iter().all(|e| e.lambda == 0.0));
    assert_eq!(plain, run(&quick_cfg(true, 0.0)).0);
}

#[test]
fn training_learns_the_toy_labels_and_keeps_best_epoch() {
    let data = two_domain_set(400, 2);
    let (tr, ev) = data.split_at(320);
    let small = ClassifierConfig {
        embed_dim: 16,
        depth: 1,
        heads: 2,
        mlp_hidden: 32,
        ..toy_classifier_config()
    };
    let mut m = Classifier::<f32>::new(small, &mut rng(3)).unwrap();
    let cfg = ClassifierTrainConfig {
        epochs: 14,
        adam: AdamConfig::with_lr(3e-3),
        ..quick_cfg(false, 10.0)
    };
    let out = train(&mut m, tr, Some(ev), &cfg, Exec::default(), |_| {}).unwrap();
    let best = out
        .log
        .iter()
        .filter_map(|e| e.score)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(out.log[out.best_epoch - 1].score, Some(best));
    let eval = m.evaluate(ev, Exec::default()).unwrap();
    assert_eq!(eval.metrics.unwrap().score, best);
    assert!(eval.accuracy > 80.0, "{}", eval.accuracy);
}

#[test]
fn missing_feature_cache_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let rec = SampleRecord {
        id: "101_1b1_Al_0".into(),
        path: "a.wav".into(),
        label: Label::Wheeze,
        split: Split::Train,
        source: Source::Real,
    };
    match load_features(std::slice::from_ref(&rec), dir.path(), Exec::Sequential) {
        Err(Error::Data(m)) => assert!(m.contains("101_1b1_Al_0"), "{m}"),
        other => panic!("{other:?}"),
    }
    let t = Tensor::<f32>::zeros(&[6, 4]);
    crate::checkpoint::write_features(
        &dir.path().join(Pipeline::Classifier.cache_name(&rec.id)),
        std::slice::from_ref(&t),
    )
    .unwrap();
    let loaded = load_features(&[rec], dir.path(), Exec::Sequential).unwrap();
    assert_eq!((loaded[0].label, loaded[0].domain), (2, 0));
    assert_eq!(loaded[0].features, t);
}

#[test]
fn probe_separates_shifted_domains() {
    let data = two_domain_set(200, 4);
    let m = Classifier::<f32>::new(toy_classifier_config(), &mut rng(6)).unwrap();
    // Even a random encoder carries the ripple.
    let acc = domain_probe(&m, &data[..160], &data[160..], Exec::default()).unwrap();
    assert!(acc >= 90.0, "{acc}");
}

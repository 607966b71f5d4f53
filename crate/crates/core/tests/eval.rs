use stylealign::captioner::{DecodeConfig, ModelConfig, TinyCaptioner};
use stylealign::classifier::*;
use stylealign::eval::*;
use stylealign::world::*;
use stylealign::Tensor;

fn test_set(n: usize, seed: u64) -> Vec<PreferenceTriplet> {
    synthesize_dataset(&WorldConfig { n_examples: n, ..WorldConfig::default() }, seed).unwrap()
}

fn model(seed: u64, zero_head: bool, scale: f64) -> TinyCaptioner {
    let mut m = TinyCaptioner::new(ModelConfig { init_seed: seed, zero_head, ..ModelConfig::default() }).unwrap();
    for p in m.params_mut() {
        *p = p.map(|x| x * scale);
    }
    m
}

fn swapped(data: &[PreferenceTriplet]) -> Vec<PreferenceTriplet> {
    data.iter()
        .map(|t| PreferenceTriplet {
            factual: t.stylized.clone(),
            stylized: t.factual.clone(),
            ..t.clone()
        })
        .collect()
}

/// A classifier that labels everything with the sign of `bias`.
fn constant_classifier(bias: f64) -> StyleClassifier {
    let cfg = ClassifierConfig::default();
    let input = 16 + cfg.embed_dim;
    StyleClassifier {
        embedder: PairEmbedder::new(cfg.vocab_size, cfg.embed_dim, 0),
        head: ClassifierHead::from_params(vec![
            Tensor::zeros(&[input, 2]),
            Tensor::zeros(&[2]),
            Tensor::zeros(&[2, 1]),
            Tensor::vector(vec![bias]),
        ])
        .unwrap(),
        style: Style::Humor,
        config: cfg,
    }
}

#[test]
fn zero_head_ties_every_pair() {
    let test = test_set(40, 0);
    assert_eq!(wr_logp(&model(0, true, 1.0), &test, Some(Style::Humor)).unwrap(), 0.0);
    assert_eq!(wr_logp(&model(0, true, 1.0), &swapped(&test), None).unwrap(), 0.0);
}

#[test]
fn swapping_roles_is_antisymmetric() {
    let test = test_set(131, 1);
    for seed in 0..3 {
        let m = model(seed, false, 20.0);
        let a = wr_logp(&m, &test, Some(Style::Humor)).unwrap();
        let b = wr_logp(&m, &swapped(&test), Some(Style::Humor)).unwrap();
        assert!((a + b - 100.0).abs() < 1e-9, "{a} + {b}");
    }
}

#[test]
fn order_does_not_matter_and_reruns_agree() {
    let test = test_set(70, 2);
    let m = model(4, false, 20.0);
    let a = wr_logp(&m, &test, Some(Style::Humor)).unwrap();
    let mut reversed = test.clone();
    reversed.reverse();
    assert_eq!(wr_logp(&m, &reversed, Some(Style::Humor)).unwrap(), a);
    assert_eq!(wr_logp(&m, &test, Some(Style::Humor)).unwrap().to_bits(), a.to_bits());
}

#[test]
fn a_model_preferring_every_stylized_caption_wins_everything() {
    // bias-only head that puts most mass on humor markers
    let cfg = WorldConfig::default();
    let markers = cfg.layout().markers(Style::Humor);
    let mut m = model(0, true, 1.0);
    let n = m.params().len();
    for (i, b) in m.params_mut()[n - 1].data_mut().iter_mut().enumerate() {
        *b = if markers.contains(&i) { 5.0 } else { 0.0 };
    }
    assert_eq!(wr_logp(&m, &test_set(50, 3), None).unwrap(), 100.0);
}

#[test]
fn style_acc_with_degenerate_classifiers() {
    let test = test_set(20, 4);
    let m = model(1, false, 1.0);
    let decode = DecodeConfig { max_tokens: 8, ..DecodeConfig::default() };
    assert_eq!(style_acc(&m, &constant_classifier(50.0), &test, &decode).unwrap(), 100.0);
    assert_eq!(style_acc(&m, &constant_classifier(-50.0), &test, &decode).unwrap(), 0.0);
    assert!(style_acc(&m, &constant_classifier(1.0), &[], &decode).is_err());
    assert!(wr_logp(&m, &[], None).is_err());
}

#[test]
fn style_acc_is_repeatable() {
    let test = test_set(30, 5);
    let m = model(2, false, 20.0);
    let clf = constant_classifier(0.0);
    let (trained, _) = train_classifier(
        &labeled_pairs(&test_set(300, 6)),
        &labeled_pairs(&test_set(40, 7)),
        Style::Humor,
        &ClassifierConfig { max_epochs: 3, ..ClassifierConfig::default() },
    )
    .unwrap();
    for c in [&clf, &trained] {
        let a = style_acc(&m, c, &test, &DecodeConfig::default()).unwrap();
        assert_eq!(a.to_bits(), style_acc(&m, c, &test, &DecodeConfig::default()).unwrap().to_bits());
    }
}

#[test]
fn report_rows_and_validation() {
    let r = make_report(Method::ZeroShot, "toy-newyorker", 20.6, 57.3, 131).unwrap();
    assert_eq!(r.csv_row(), "zero_shot,toy-newyorker,20.6,57.3,131");
    let csv = EvalReport::to_csv(std::slice::from_ref(&r));
    assert_eq!(EvalReport::from_csv(&csv).unwrap(), vec![r]);
    assert!(make_report(Method::Sft, "toy", -1.0, 50.0, 10).is_err());
    assert!(make_report(Method::Simpo, "toy", 50.0, 100.5, 10).is_err());
    assert_eq!(make_report(Method::Simpo, "toy", 100.0 * 91.0 / 131.0, 97.0, 131).unwrap().wr_logp, 69.5);
}

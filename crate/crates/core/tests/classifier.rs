use proptest::prelude::*;
use stylealign::classifier::*;
use stylealign::world::*;
use stylealign::Tensor;

fn ny_splits() -> DatasetSplits {
    let data = synthesize_dataset(&WorldConfig::default(), 0).unwrap();
    split_dataset(&data, SplitSizes { train: 2340, val: 130, test: 131 }, 0).unwrap()
}

/// Depth-2 head with zero weights and the given output bias.
fn constant_head(input: usize, bias: f64) -> ClassifierHead {
    ClassifierHead::from_params(vec![
        Tensor::zeros(&[input, 4]),
        Tensor::zeros(&[4]),
        Tensor::zeros(&[4, 1]),
        Tensor::vector(vec![bias]),
    ])
    .unwrap()
}

fn two_decimals(m: &ClassifierMetrics) -> [String; 4] {
    [m.precision, m.recall, m.f1, m.accuracy].map(|x| format!("{x:.2}"))
}

#[test]
fn hand_confusion_matrix() {
    let c = Confusion { tp: 12, fp: 2, fn_: 3, tn: 13 };
    assert_eq!(two_decimals(&c.metrics()), ["85.71", "80.00", "82.76", "83.33"]);

    let mut preds = vec![];
    let mut labels = vec![];
    for (n, p, l) in [(12, true, true), (2, true, false), (3, false, true), (13, false, false)] {
        preds.extend(std::iter::repeat_n(p, n));
        labels.extend(std::iter::repeat_n(l, n));
    }
    assert_eq!(classifier_metrics(&preds, &labels).unwrap(), c.metrics());
    let perfect = classifier_metrics(&labels, &labels).unwrap();
    assert_eq!(two_decimals(&perfect), ["100.00", "100.00", "100.00", "100.00"]);
}

#[test]
fn one_decimal_report_row() {
    let m = ClassifierMetrics { precision: 85.714, recall: 96.2, f1: 90.649, accuracy: 90.08 };
    assert_eq!(m.csv_row("toy-newyorker"), "toy-newyorker,85.7,96.2,90.6,90.1");
}

#[test]
fn threshold_and_tie_rule() {
    let head = constant_head(3, 0.0);
    assert_eq!(head.classify(&[1.0, -2.0, 0.5]).unwrap(), (0.5, true));
    let (p, label) = constant_head(3, 3f64.ln()).classify(&[0.0; 3]).unwrap();
    assert!((p - 0.75).abs() < 1e-15 && label);
    let (p, label) = constant_head(3, -(3f64.ln())).classify(&[0.0; 3]).unwrap();
    assert!((p - 0.25).abs() < 1e-15 && !label);
    assert!(head.classify(&[0.0; 4]).is_err());
}

#[test]
fn bce_values() {
    let ln2 = std::f64::consts::LN_2;
    assert!((bce(0.5, true) - ln2).abs() < 1e-15);
    assert!((bce(0.5, false) - ln2).abs() < 1e-15);
    assert_eq!(bce(1.0, true), 0.0);
    assert_eq!(bce(0.0, false), 0.0);
}

#[test]
fn pair_embedding_shape_determinism_and_pooling() {
    let e = PairEmbedder::new(64, 32, 3);
    let t = &synthesize_dataset(&WorldConfig { n_examples: 1, ..WorldConfig::default() }, 1).unwrap()[0];
    let a = e.embed_pair(&t.image, &t.stylized).unwrap();
    assert_eq!(a.len(), 16 + 32);
    assert_eq!(a, PairEmbedder::new(64, 32, 3).embed_pair(&t.image, &t.stylized).unwrap());
    let mut body = t.stylized.body().to_vec();
    body.reverse();
    let reversed = Caption::from_tokens(&body).unwrap();
    let b = e.embed_pair(&t.image, &reversed).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn depth_two_head_separates_the_synthetic_world() {
    let s = ny_splits();
    let cfg = ClassifierConfig::default();
    let (clf, history) = train_classifier(&labeled_pairs(&s.train), &labeled_pairs(&s.validation), Style::Humor, &cfg).unwrap();
    assert_eq!(clf.head.depth(), 2);
    assert!(history.val_loss.len() <= 20);
    let test = labeled_pairs(&s.test);
    let labels: Vec<bool> = test.iter().map(|p| p.label).collect();
    let m = classifier_metrics(&predict(&clf, &test).unwrap(), &labels).unwrap();
    assert!(m.accuracy >= 90.0, "{m:?}");

    // same seeds, same head
    let (again, _) = train_classifier(&labeled_pairs(&s.train), &labeled_pairs(&s.validation), Style::Humor, &cfg).unwrap();
    assert_eq!(again, clf);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clf.json");
    clf.save(&path).unwrap();
    assert_eq!(StyleClassifier::load(&path).unwrap(), clf);
}

#[test]
fn depth_four_head_trains() {
    let data = synthesize_dataset(&WorldConfig { n_examples: 400, ..WorldConfig::default() }, 2).unwrap();
    let s = split_dataset(&data, SplitSizes { train: 300, val: 50, test: 50 }, 0).unwrap();
    let cfg = ClassifierConfig { depth: 4, ..ClassifierConfig::default() };
    let (clf, _) = train_classifier(&labeled_pairs(&s.train), &labeled_pairs(&s.validation), Style::Humor, &cfg).unwrap();
    assert_eq!(clf.head.depth(), 4);
}

#[test]
fn single_class_training_data_is_rejected() {
    let s = ny_splits();
    let positives: Vec<LabeledPair> = labeled_pairs(&s.train).into_iter().filter(|p| p.label).collect();
    let err = train_classifier(&positives, &labeled_pairs(&s.validation), Style::Humor, &ClassifierConfig::default());
    assert!(err.is_err());
}

proptest! {
    #[test]
    fn f1_is_the_harmonic_mean(tp in 0usize..200, fp in 0usize..200, fn_ in 0usize..200, tn in 0usize..200) {
        prop_assume!(tp + fp + fn_ + tn > 0);
        let m = Confusion { tp, fp, fn_, tn }.metrics();
        if m.precision > 0.0 && m.recall > 0.0 {
            let hm = 2.0 / (1.0 / m.precision + 1.0 / m.recall);
            prop_assert!((m.f1 - hm).abs() < 1e-9);
        }
        let brute = 100.0 * (tp + tn) as f64 / (tp + fp + fn_ + tn) as f64;
        prop_assert!((m.accuracy - brute).abs() < 1e-12);
    }

    #[test]
    fn label_depends_only_on_logit_sign(bias in -20.0f64..20.0) {
        let (p, label) = constant_head(2, bias).classify(&[0.3, 0.1]).unwrap();
        prop_assert_eq!(label, bias >= 0.0);
        prop_assert_eq!(label, p >= THRESHOLD);
    }
}

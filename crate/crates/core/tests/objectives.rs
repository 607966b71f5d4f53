use proptest::prelude::*;
use stylealign::captioner::{ModelConfig, TinyCaptioner};
use stylealign::gradcheck::check_sampled;
use stylealign::objectives::*;
use stylealign::world::*;

fn data(n: usize, seed: u64) -> Vec<PreferenceTriplet> {
    synthesize_dataset(&WorldConfig { n_examples: n, ..WorldConfig::default() }, seed).unwrap()
}

fn zero_head() -> TinyCaptioner {
    TinyCaptioner::new(ModelConfig { zero_head: true, ..ModelConfig::default() }).unwrap()
}

/// A model whose every position predicts `log_probs` (head weights zero,
/// head bias set to the log-probabilities).
fn constant_model(log_probs: &[f64]) -> TinyCaptioner {
    let mut m = zero_head();
    let n = m.params().len();
    m.params_mut()[n - 1].data_mut().copy_from_slice(log_probs);
    m
}

#[test]
fn sft_on_uniform_model_is_ln_v() {
    let m = zero_head();
    for seed in 0..3 {
        let d = data(5, seed);
        let batch: Vec<_> = d.iter().map(|t| (&t.image, &t.stylized)).collect();
        let loss = sft_loss(&m, &batch, Some(Style::Humor)).unwrap();
        assert!((loss - 64f64.ln()).abs() < 1e-12, "{loss}");
    }
}

#[test]
fn sft_hand_example_averages_token_nll() {
    // caption [a, EOS] with log-probs -0.5 and -1.5; remaining mass spread evenly
    let a = 7;
    let rest = (1.0 - (-0.5f64).exp() - (-1.5f64).exp()) / 62.0;
    let mut lp = vec![rest.ln(); 64];
    lp[a] = -0.5;
    lp[EOS] = -1.5;
    let m = constant_model(&lp);
    let t = &data(1, 0)[0];
    let caption = Caption::from_tokens(&[a]).unwrap();
    let loss = sft_loss(&m, &[(&t.image, &caption)], None).unwrap();
    assert!((loss - 1.0).abs() < 1e-12, "{loss}");
}

#[test]
fn sft_matches_per_position_oracle() {
    let mut m = TinyCaptioner::new(ModelConfig { init_seed: 2, ..ModelConfig::default() }).unwrap();
    for p in m.params_mut() {
        *p = p.map(|x| x * 20.0);
    }
    let d = data(6, 1);
    let batch: Vec<_> = d.iter().map(|t| (&t.image, &t.stylized)).collect();
    let (mut nll, mut tokens) = (0.0, 0);
    for (image, caption) in &batch {
        let ids = caption.ids();
        for j in 0..ids.len() {
            let logits = m.forward_logits(image, Some(Style::Humor), &ids[..=j]).unwrap();
            let row = logits.row(j);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            nll -= row[ids[j]] - lse;
            tokens += 1;
        }
    }
    let loss = sft_loss(&m, &batch, Some(Style::Humor)).unwrap();
    assert!((loss - nll / tokens as f64).abs() < 1e-9);
}

#[test]
fn simpo_closed_forms() {
    let ln2 = std::f64::consts::LN_2;
    let zero_gamma = SimpoHyper { beta: 2.0, gamma: 0.0 };
    assert!((simpo_pair_loss(-1.3, -1.3, zero_gamma) - ln2).abs() < 1e-12);
    assert!((simpo_pair_loss(-1.0, -2.0, zero_gamma) - 0.1269280110429725).abs() < 1e-9);
    let met = SimpoHyper { beta: 2.0, gamma: 0.5 };
    assert!((simpo_pair_loss(-1.0, -1.25, met) - ln2).abs() < 1e-12);

    // a uniform model ties every pair
    let d = data(4, 2);
    let batch: Vec<_> = d.iter().collect();
    let loss = simpo_loss(&zero_head(), &batch, zero_gamma, Some(Style::Humor)).unwrap();
    assert!((loss - ln2).abs() < 1e-12);
    let with_margin = simpo_loss(&zero_head(), &batch, SimpoHyper::default(), None).unwrap();
    assert!((with_margin - (1.0 + 0.5f64.exp()).ln()).abs() < 1e-12);
}

#[test]
fn empty_batches_are_rejected() {
    assert!(sft_loss(&zero_head(), &[], None).is_err());
    assert!(simpo_loss(&zero_head(), &[], SimpoHyper::default(), None).is_err());
    let t = &data(1, 0)[0];
    assert!(simpo_loss(&zero_head(), &[t], SimpoHyper { beta: -1.0, gamma: 0.0 }, None).is_err());
}

#[test]
fn both_losses_pass_finite_differences() {
    let cfg = ModelConfig {
        vocab_size: 32,
        d_model: 16,
        n_layers: 2,
        feature_dim: 16,
        ff_hidden: 32,
        init_seed: 5,
        zero_head: false,
    };
    let mut m = TinyCaptioner::new(cfg).unwrap();
    for p in m.params_mut() {
        *p = p.map(|x| x * 5.0);
    }
    let world = WorldConfig {
        n_examples: 3,
        vocab_size: 32,
        lexicon_size: 8,
        ..WorldConfig::default()
    };
    let d = synthesize_dataset(&world, 4).unwrap();
    let triplets: Vec<&PreferenceTriplet> = d.iter().collect();
    let pairs: Vec<_> = d.iter().map(|t| (&t.image, &t.stylized)).collect();
    for objective in [Objective::Sft, Objective::Simpo] {
        let r = check_sampled(m.params(), 1e-4, 4, 1, |g, ids| {
            let p = m.bind_ids(ids)?;
            match objective {
                Objective::Sft => sft_loss_node(&m, g, &p, &pairs, Some(Style::Humor)),
                Objective::Simpo => simpo_loss_node(&m, g, &p, &triplets, SimpoHyper::default(), Some(Style::Humor)),
            }
        })
        .unwrap();
        assert!(r.max_error < 1e-3, "{}: {r:?}", objective.as_str());
    }
}

proptest! {
    #[test]
    fn simpo_is_positive_and_monotone(
        s_w in -20.0f64..0.0,
        s_l in -20.0f64..0.0,
        beta in 0.1f64..5.0,
        gamma in 0.0f64..3.0,
    ) {
        let hyper = SimpoHyper { beta, gamma };
        let loss = simpo_pair_loss(s_w, s_l, hyper);
        prop_assert!(loss > 0.0);
        let h = 1e-4;
        let d_w = (simpo_pair_loss(s_w + h, s_l, hyper) - simpo_pair_loss(s_w - h, s_l, hyper)) / (2.0 * h);
        let d_l = (simpo_pair_loss(s_w, s_l + h, hyper) - simpo_pair_loss(s_w, s_l - h, hyper)) / (2.0 * h);
        // far into the saturated tail the derivative underflows to zero
        if beta * (s_w - s_l) - gamma < 30.0 {
            prop_assert!(d_w < 0.0 && d_l > 0.0, "{d_w} {d_l}");
            let stricter = SimpoHyper { beta, gamma: gamma + 0.1 };
            prop_assert!(simpo_pair_loss(s_w, s_l, stricter) > loss);
            prop_assert!(simpo_pair_loss(s_w + 0.1, s_l, hyper) < loss);
        }
    }
}

use kvmn_core::data::{gen_copy_episode, Episode, TokenId};
use kvmn_core::model::{AddressingMode, Model, ModelConfig};
use kvmn_core::search::{beam_search, greedy_decode, sequence_log_prob, BeamConfig, Hypothesis};
use proptest::prelude::*;

fn config(vocab: usize, mode: AddressingMode) -> ModelConfig {
    ModelConfig {
        mode,
        feature_dim: 4,
        key_dim: 4,
        value_dim: 4,
        hidden_dim: 6,
        embed_dim: 3,
        attn_dim: 4,
        vocab_size: vocab,
        ..ModelConfig::default()
    }
}

/// Random model with its logits scaled up so that different sequences have
/// clearly different probabilities.
fn sharp_model(vocab: usize, seed: u64) -> Model {
    let mode = AddressingMode::ALL[(seed % 3) as usize];
    let mut m = Model::new(config(vocab, mode), seed).unwrap();
    m.params.readout_w.data_mut().iter_mut().for_each(|v| *v *= 4.0);
    m
}

/// Best finished sequence by brute force: every candidate sequence of up to
/// `max_len` tokens that ends at its first EOS.
fn exhaustive(model: &Model, ep: &Episode, max_len: usize) -> Hypothesis {
    let v = model.config.vocab_size as u32;
    let content: Vec<TokenId> = (3..v).map(TokenId).collect();
    let mut prefixes = vec![vec![TokenId::BOS]];
    let mut best: Option<Hypothesis> = None;
    for _ in 0..max_len {
        let mut next = Vec::new();
        for p in &prefixes {
            let mut done = p.clone();
            done.push(TokenId::EOS);
            let lp = sequence_log_prob(model, ep, &done).unwrap();
            let better = match &best {
                None => true,
                Some(b) => lp > b.log_prob || (lp == b.log_prob && done < b.tokens),
            };
            if better {
                best = Some(Hypothesis { tokens: done, log_prob: lp });
            }
            for &c in &content {
                let mut q = p.clone();
                q.push(c);
                next.push(q);
            }
        }
        prefixes = next;
    }
    best.unwrap()
}

#[test]
fn wide_beam_is_exhaustive() {
    for (vocab, width) in [(4usize, 64usize), (6, 64)] {
        for seed in 0..20 {
            let model = sharp_model(vocab, seed);
            let ep = gen_copy_episode(3, vocab.max(5), 4, seed).unwrap();
            let ep = Episode { captions: vec![vec![TokenId::BOS, TokenId::EOS]], ..ep };
            let cfg = BeamConfig { width, max_len: 3, length_normalize: false };
            let got = beam_search(&model, &ep, &cfg).unwrap();
            let want = exhaustive(&model, &ep, 3);
            assert_eq!(got.tokens, want.tokens, "V={vocab} seed {seed}");
            assert!((got.log_prob - want.log_prob).abs() < 1e-9);
        }
    }
}

#[test]
fn beam_never_beats_the_optimum() {
    for seed in 0..10 {
        let model = sharp_model(6, seed);
        let ep = gen_copy_episode(3, 6, 4, seed).unwrap();
        let best = exhaustive(&model, &ep, 3);
        for width in 1..=8 {
            let cfg = BeamConfig { width, max_len: 3, length_normalize: false };
            let h = beam_search(&model, &ep, &cfg).unwrap();
            if h.tokens.last() == Some(&TokenId::EOS) {
                assert!(h.log_prob <= best.log_prob + 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn width_one_is_greedy(seed in any::<u64>(), vocab in 5usize..10, max_len in 1usize..6) {
        let model = sharp_model(vocab, seed);
        let ep = gen_copy_episode(4, vocab, 4, seed).unwrap();
        let g = greedy_decode(&model, &ep, max_len).unwrap();
        let b = beam_search(&model, &ep, &BeamConfig { width: 1, max_len, length_normalize: false }).unwrap();
        prop_assert_eq!(&g, &b);
    }

    #[test]
    fn returned_score_matches_recomputation(seed in any::<u64>(), width in 1usize..6, norm in any::<bool>()) {
        let model = sharp_model(8, seed);
        let ep = gen_copy_episode(4, 8, 4, seed).unwrap();
        let h = beam_search(&model, &ep, &BeamConfig { width, max_len: 6, length_normalize: norm }).unwrap();
        let again = sequence_log_prob(&model, &ep, &h.tokens).unwrap();
        prop_assert!((h.log_prob - again).abs() < 1e-9);
        prop_assert_eq!(h.tokens[0], TokenId::BOS);
        prop_assert!(h.tokens[1..].iter().all(|&t| t != TokenId::PAD && t != TokenId::BOS));
    }
}

#[test]
fn certain_eos_gives_empty_caption() {
    let mut model = Model::new(config(8, AddressingMode::MemoryLstm), 1).unwrap();
    model.params.readout_b.data_mut()[TokenId::EOS.index()] = 1e3;
    let ep = gen_copy_episode(3, 8, 4, 1).unwrap();
    let h = beam_search(&model, &ep, &BeamConfig::default()).unwrap();
    assert_eq!(h.tokens, vec![TokenId::BOS, TokenId::EOS]);
    assert!(h.log_prob.abs() < 1e-12);
}

#[test]
fn uniform_model_ties_go_to_lowest_allowed_id() {
    let model = Model::zeros(config(8, AddressingMode::PreviousRead)).unwrap();
    let ep = gen_copy_episode(3, 8, 4, 1).unwrap();
    let g = greedy_decode(&model, &ep, 5).unwrap();
    assert_eq!(g.tokens, vec![TokenId::BOS, TokenId::EOS]);
    // With EOS suppressed the next allowed id is UNK.
    let mut model = model;
    model.params.readout_b.data_mut()[TokenId::EOS.index()] = -50.0;
    let g = greedy_decode(&model, &ep, 2).unwrap();
    assert_eq!(g.tokens, vec![TokenId::BOS, TokenId::UNK, TokenId::UNK]);
}

#[test]
fn unfinished_search_returns_max_length() {
    let mut model = Model::new(config(8, AddressingMode::MemoryLstm), 1).unwrap();
    model.params.readout_b.data_mut()[TokenId::EOS.index()] = -1e3;
    let ep = gen_copy_episode(3, 8, 4, 1).unwrap();
    let h = beam_search(&model, &ep, &BeamConfig { width: 3, max_len: 4, length_normalize: false }).unwrap();
    assert_eq!(h.tokens.len(), 5);
}

#[test]
fn invalid_settings_rejected() {
    let model = Model::new(config(8, AddressingMode::MemoryLstm), 1).unwrap();
    let ep = gen_copy_episode(3, 8, 4, 1).unwrap();
    assert!(beam_search(&model, &ep, &BeamConfig { width: 0, ..BeamConfig::default() }).is_err());
    assert!(beam_search(&model, &ep, &BeamConfig { max_len: 0, ..BeamConfig::default() }).is_err());
    assert!(greedy_decode(&model, &ep, 0).is_err());
    assert!(sequence_log_prob(&model, &ep, &[TokenId::EOS]).is_err());
}

use kvmn_core::data::{gen_copy_episode, Episode, TokenId};
use kvmn_core::model::{AddressingMode, EpisodeGraph, Model, ModelConfig};
use proptest::prelude::*;

fn config(mode: AddressingMode) -> ModelConfig {
    ModelConfig {
        mode,
        feature_dim: 5,
        key_dim: 5,
        value_dim: 5,
        hidden_dim: 7,
        embed_dim: 4,
        attn_dim: 6,
        vocab_size: 10,
        ..ModelConfig::default()
    }
}

/// The same weights in mode `t`, minus the Memory-LSTM.
fn as_previous_read(m: &Model) -> Model {
    let mut params = m.params.clone();
    params.addressing.key_lstm = None;
    Model { config: ModelConfig { mode: AddressingMode::PreviousRead, ..m.config.clone() }, params }
}

fn alphas(model: &Model, ep: &Episode, force: bool) -> Vec<Vec<u64>> {
    let mut eg = EpisodeGraph::new(model, ep, false).unwrap();
    let (mut addr, mut dec) = eg.start().unwrap();
    let mut out = Vec::new();
    for &tok in &ep.captions[0][1..] {
        let forced = force.then_some(addr.phi_k);
        let s = eg.session.step_with(&mut eg.graph, &addr, &dec, forced).unwrap();
        out.push(eg.graph.value(s.addressing.alpha).data().iter().map(|v| v.to_bits()).collect());
        dec = dec.advance(&s.decode, tok);
        addr = s.addressing;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn forced_memory_lstm_matches_previous_read(seed in any::<u64>(), t in 1usize..7) {
        let m = Model::new(config(AddressingMode::MemoryLstm), seed).unwrap();
        let ep = gen_copy_episode(t, 10, 5, seed ^ 0x55).unwrap();
        prop_assert_eq!(alphas(&m, &ep, true), alphas(&as_previous_read(&m), &ep, false));
    }
}

#[test]
fn unforced_memory_lstm_differs() {
    let m = Model::new(config(AddressingMode::MemoryLstm), 1).unwrap();
    let ep = gen_copy_episode(4, 10, 5, 2).unwrap();
    assert_ne!(alphas(&m, &ep, false), alphas(&as_previous_read(&m), &ep, false));
}

#[test]
fn first_query_uses_mean_key() {
    for seed in 0..20 {
        let model = Model::new(config(AddressingMode::PreviousRead), seed).unwrap();
        let ep = gen_copy_episode(6, 10, 5, seed).unwrap();
        let mut eg = EpisodeGraph::new(&model, &ep, false).unwrap();
        let (addr, dec) = eg.start().unwrap();
        let s = eg.step(&addr, &dec).unwrap();
        let q = eg.graph.value(s.addressing.query.unwrap()).data().to_vec();

        let t = ep.frames.len() as f64;
        let mean: Vec<f64> = (0..5).map(|j| ep.frames.iter().map(|f| f[j]).sum::<f64>() / t).collect();
        let wk = &model.params.addressing.w_k;
        // h_0 = 0, so the decoder term vanishes.
        for (i, &qi) in q.iter().enumerate() {
            let expected: f64 = (0..5).map(|j| wk.data()[i * 5 + j] * mean[j]).sum();
            assert!((qi - expected).abs() < 1e-12, "seed {seed}: {qi} vs {expected}");
        }
    }
}

#[test]
fn decoder_only_ignores_key_summary() {
    let mut model = Model::new(config(AddressingMode::DecoderOnly), 5).unwrap();
    let ep = gen_copy_episode(4, 10, 5, 3).unwrap();
    let before = alphas(&model, &ep, false);
    model.params.addressing.w_k.data_mut().iter_mut().for_each(|v| *v = 3.0);
    assert_eq!(alphas(&model, &ep, false), before);
}

#[test]
fn start_state_is_uniform() {
    let model = Model::new(config(AddressingMode::MemoryLstm), 5).unwrap();
    let ep = gen_copy_episode(4, 10, 5, 3).unwrap();
    let mut eg = EpisodeGraph::new(&model, &ep, false).unwrap();
    let (addr, dec) = eg.start().unwrap();
    assert_eq!(eg.graph.value(addr.alpha).data(), &[0.25; 4]);
    assert_eq!(eg.graph.value(addr.c_k).data(), &[0.0; 5]);
    assert_eq!(addr.h_k, addr.phi_k);
    assert_eq!(dec.prev_token, TokenId::BOS);
}

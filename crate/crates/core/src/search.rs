//! Greedy and beam-search caption generation.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::data::{Episode, TokenId};
use crate::error::{contract_err, Result};
use crate::model::{AddressingState, DecoderState, EpisodeGraph, Model};
use crate::nn::log_softmax;

pub const DEFAULT_BEAM_WIDTH: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub width: usize,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    /// Rank by mean per-token log-probability instead of the sum.
    pub length_normalize: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { width: DEFAULT_BEAM_WIDTH, max_len: DEFAULT_MAX_LEN, length_normalize: false }
    }
}

/// A token sequence starting with BOS and its cumulative log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
}

impl Hypothesis {
    pub fn is_finished(&self) -> bool {
        self.tokens.len() > 1 && self.tokens.last() == Some(&TokenId::EOS)
    }

    fn score(&self, normalize: bool) -> f64 {
        if normalize && self.tokens.len() > 1 {
            self.log_prob / (self.tokens.len() - 1) as f64
        } else {
            self.log_prob
        }
    }
}

/// Tokens that may be emitted: everything but PAD and BOS.
pub fn is_candidate(token: TokenId) -> bool {
    token != TokenId::PAD && token != TokenId::BOS
}

/// Higher score first, then the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis, normalize: bool) -> Ordering {
    b.score(normalize).total_cmp(&a.score(normalize)).then_with(|| a.tokens.cmp(&b.tokens))
}

struct Live {
    hyp: Hypothesis,
    state: Option<(AddressingState, DecoderState)>,
}

fn expand(eg: &mut EpisodeGraph, addr: &AddressingState, dec: &DecoderState) -> Result<(AddressingState, DecoderState, Vec<f64>)> {
    let out = eg.step(addr, dec)?;
    let logp = log_softmax(eg.graph.value(out.decode.logits).data());
    // `t` advances; the fed token is filled in by the caller.
    let next = dec.advance(&out.decode, dec.prev_token);
    Ok((out.addressing, next, logp))
}

pub fn beam_search(model: &Model, episode: &Episode, config: &BeamConfig) -> Result<Hypothesis> {
    if config.width == 0 || config.max_len == 0 {
        return Err(contract_err!("beam width and max length must be at least 1"));
    }
    let mut eg = EpisodeGraph::new(model, episode, false)?;
    let start = eg.start()?;
    let mut beam = vec![Live { hyp: Hypothesis { tokens: vec![TokenId::BOS], log_prob: 0.0 }, state: Some(start) }];
    for _ in 0..config.max_len {
        if beam.iter().all(|l| l.state.is_none()) {
            break;
        }
        let mut next: Vec<Live> = Vec::new();
        for live in beam {
            let Some((addr, dec)) = live.state else {
                next.push(live);
                continue;
            };
            let (addr, dec, logp) = expand(&mut eg, &addr, &dec)?;
            for (id, &lp) in logp.iter().enumerate() {
                let token = TokenId(id as u32);
                if !is_candidate(token) {
                    continue;
                }
                let mut tokens = live.hyp.tokens.clone();
                tokens.push(token);
                let state = (token != TokenId::EOS).then_some((addr, DecoderState { prev_token: token, ..dec }));
                next.push(Live { hyp: Hypothesis { tokens, log_prob: live.hyp.log_prob + lp }, state });
            }
        }
        next.sort_by(|a, b| rank(&a.hyp, &b.hyp, config.length_normalize));
        next.truncate(config.width);
        beam = next;
    }
    // Best finished hypothesis; otherwise the best of the (max-length) live ones.
    let finished = beam.iter().find(|l| l.hyp.is_finished());
    Ok(finished.unwrap_or(&beam[0]).hyp.clone())
}

/// Picks the most likely candidate at each step, lowest id on ties.
pub fn greedy_decode(model: &Model, episode: &Episode, max_len: usize) -> Result<Hypothesis> {
    if max_len == 0 {
        return Err(contract_err!("max length must be at least 1"));
    }
    let mut eg = EpisodeGraph::new(model, episode, false)?;
    let (mut addr, mut dec) = eg.start()?;
    let mut hyp = Hypothesis { tokens: vec![TokenId::BOS], log_prob: 0.0 };
    for _ in 0..max_len {
        let (a, d, logp) = expand(&mut eg, &addr, &dec)?;
        let (best, lp) = argmax_candidate(&logp);
        hyp.tokens.push(best);
        hyp.log_prob += lp;
        if best == TokenId::EOS {
            break;
        }
        (addr, dec) = (a, DecoderState { prev_token: best, ..d });
    }
    Ok(hyp)
}

/// Highest-scoring emittable token; the lowest id wins ties.
pub fn argmax_candidate(scores: &[f64]) -> (TokenId, f64) {
    let mut best: Option<(TokenId, f64)> = None;
    for (id, &s) in scores.iter().enumerate() {
        let token = TokenId(id as u32);
        if is_candidate(token) && best.is_none_or(|(_, b)| s > b) {
            best = Some((token, s));
        }
    }
    best.unwrap_or((TokenId::EOS, f64::NEG_INFINITY))
}

/// Teacher-forced `sum_j log p(tokens[j] | tokens[..j])` for a BOS-led sequence.
pub fn sequence_log_prob(model: &Model, episode: &Episode, tokens: &[TokenId]) -> Result<f64> {
    if tokens.first() != Some(&TokenId::BOS) {
        return Err(contract_err!("sequence must start with BOS"));
    }
    let mut eg = EpisodeGraph::new(model, episode, false)?;
    let (mut addr, mut dec) = eg.start()?;
    let mut total = 0.0;
    for &token in &tokens[1..] {
        let (a, d, logp) = expand(&mut eg, &addr, &dec)?;
        total += *logp
            .get(token.index())
            .ok_or_else(|| contract_err!("token {token} outside the vocabulary"))?;
        (addr, dec) = (a, DecoderState { prev_token: token, ..d });
    }
    Ok(total)
}

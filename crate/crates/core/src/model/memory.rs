use alloc::vec;
use alloc::vec::Vec;

use super::{AddressingMode, AddressingParams, KeyMode, ModelConfig};
use crate::data::{Episode, Region};
use crate::error::{contract_err, shape_err, Result};
use crate::nn::{lstm_step, LstmParams};
use crate::tensor::{Graph, NodeId, Tensor};

/// A materialized (key, value) pair for frame `index` (1-based).
#[derive(Clone, Debug, PartialEq)]
pub struct MemorySlot {
    pub key: Vec<f64>,
    pub value: Vec<f64>,
    pub index: usize,
}

/// Where per-frame values come from.
#[derive(Clone, Copy, Debug)]
pub enum ValueSource<'a> {
    /// One precomputed vector per frame, used as is.
    Vectors(&'a [Vec<f64>]),
    /// Scored region features per frame, pooled over the `top` best regions.
    Regions { sets: &'a [Vec<Region>], top: usize },
}

impl Episode {
    /// Region sets when present, otherwise the frame features themselves.
    pub fn value_source(&self, top: usize) -> ValueSource<'_> {
        match &self.regions {
            Some(sets) => ValueSource::Regions { sets, top },
            None => ValueSource::Vectors(&self.frames),
        }
    }
}

fn pool_regions(regions: &[Region], top: usize, frame: usize) -> Result<Vec<f64>> {
    let first = regions.first().ok_or_else(|| contract_err!("frame {frame}: empty region set"))?;
    let d = first.feature.len();
    for r in regions {
        if !(r.score >= 0.0 && r.score.is_finite()) {
            return Err(contract_err!("frame {frame}: region score {} is not a non-negative number", r.score));
        }
        if r.feature.len() != d {
            return Err(shape_err!("frame {frame}: region features of width {} and {d}", r.feature.len()));
        }
    }
    let mut order: Vec<usize> = (0..regions.len()).collect();
    // Stable, so equal scores keep file order.
    order.sort_by(|&a, &b| regions[b].score.total_cmp(&regions[a].score));
    order.truncate(top.max(1));
    let total: f64 = order.iter().map(|&i| regions[i].score).sum();
    if total <= 0.0 {
        return Err(contract_err!("frame {frame}: selected region scores sum to zero"));
    }
    let mut value = vec![0.0; d];
    for &i in &order {
        let w = regions[i].score / total;
        for (v, &f) in value.iter_mut().zip(&regions[i].feature) {
            *v += w * f;
        }
    }
    Ok(value)
}

/// Per-frame value vectors. Region sets are reduced to the score-weighted
/// mean of their `top` highest-scoring regions.
pub fn build_values(source: ValueSource<'_>) -> Result<Vec<Vec<f64>>> {
    let values = match source {
        ValueSource::Vectors(v) => v.to_vec(),
        ValueSource::Regions { sets, top } => sets
            .iter()
            .enumerate()
            .map(|(i, set)| pool_regions(set, top, i))
            .collect::<Result<Vec<_>>>()?,
    };
    let d = values.first().map_or(0, Vec::len);
    if values.is_empty() || d == 0 || values.iter().any(|v| v.len() != d) {
        return Err(shape_err!("values must be a non-empty rectangular matrix"));
    }
    Ok(values)
}

/// Keys for each frame. Direct mode passes the features through; rnn mode
/// runs the encoder LSTM from a zero state and takes its hidden states.
pub fn build_keys(
    g: &mut Graph,
    frames: &[NodeId],
    mode: KeyMode,
    encoder: Option<&LstmParams<NodeId>>,
    standard_output: bool,
) -> Result<Vec<NodeId>> {
    if frames.is_empty() {
        return Err(contract_err!("cannot build keys for an empty frame sequence"));
    }
    match mode {
        KeyMode::Direct => Ok(frames.to_vec()),
        KeyMode::Rnn => {
            let enc = encoder.ok_or_else(|| contract_err!("rnn keys need encoder parameters"))?;
            let hidden = g.value(enc.bias.input).len();
            let zero = g.constant(Tensor::zeros(&[hidden]))?;
            let (mut h, mut c) = (zero, zero);
            let mut keys = Vec::with_capacity(frames.len());
            for &x in frames {
                (h, c) = lstm_step(g, enc, h, c, x, None, standard_output)?;
                keys.push(h);
            }
            Ok(keys)
        }
    }
}

/// Key and value nodes of one episode, plus the per-key attention projections
/// `U_a k_i`, which do not change across decoding steps.
#[derive(Clone, Debug)]
pub struct Memory {
    pub keys: Vec<NodeId>,
    pub values: Vec<NodeId>,
    projected: Vec<NodeId>,
}

impl Memory {
    pub fn new(g: &mut Graph, keys: Vec<NodeId>, values: Vec<NodeId>, u_a: NodeId) -> Result<Self> {
        if keys.is_empty() {
            return Err(contract_err!("memory needs at least one slot"));
        }
        if keys.len() != values.len() {
            return Err(shape_err!("{} keys but {} values", keys.len(), values.len()));
        }
        let projected = keys.iter().map(|&k| g.matmul(u_a, k)).collect::<Result<Vec<_>>>()?;
        Ok(Memory { keys, values, projected })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn slots(&self, g: &Graph) -> Vec<MemorySlot> {
        self.keys
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (&k, &v))| MemorySlot {
                key: g.value(k).data().to_vec(),
                value: g.value(v).data().to_vec(),
                index: i + 1,
            })
            .collect()
    }
}

/// Attention distribution and key-addressing recurrent state after a step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AddressingState {
    pub alpha: NodeId,
    pub h_k: NodeId,
    pub c_k: NodeId,
    /// Weighted key read `sum_i alpha_i k_i`.
    pub phi_k: NodeId,
    /// Query used for this step; `None` for the initial state.
    pub query: Option<NodeId>,
    /// Relevance scores before the softmax; `None` for the initial state.
    pub scores: Option<NodeId>,
}

/// Uniform attention, with the key summary and key read both equal to the
/// mean-pooled keys and a zero key-LSTM cell.
pub fn init_addressing(g: &mut Graph, memory: &Memory) -> Result<AddressingState> {
    let t = memory.len();
    if t == 0 {
        return Err(contract_err!("memory needs at least one slot"));
    }
    let alpha = g.constant(Tensor::filled(&[t], 1.0 / t as f64))?;
    let phi_k = g.weighted_sum(alpha, &memory.keys)?;
    let d_k = g.value(phi_k).len();
    let c_k = g.constant(Tensor::zeros(&[d_k]))?;
    Ok(AddressingState { alpha, h_k: phi_k, c_k, phi_k, query: None, scores: None })
}

/// One addressing step from the previous state and previous decoder hidden state.
pub fn address_keys(
    g: &mut Graph,
    config: &ModelConfig,
    params: &AddressingParams<NodeId>,
    memory: &Memory,
    state: &AddressingState,
    dec_h_prev: NodeId,
) -> Result<AddressingState> {
    address_keys_with(g, config, params, memory, state, dec_h_prev, None)
}

/// [`address_keys`] with an optional replacement for the Memory-LSTM output.
/// Passing `Some(state.phi_k)` in mode `m` makes the step identical to mode `t`.
pub fn address_keys_with(
    g: &mut Graph,
    config: &ModelConfig,
    params: &AddressingParams<NodeId>,
    memory: &Memory,
    state: &AddressingState,
    dec_h_prev: NodeId,
    forced_key_summary: Option<NodeId>,
) -> Result<AddressingState> {
    let (h_k, c_k) = match config.mode {
        AddressingMode::DecoderOnly => (state.h_k, state.c_k),
        AddressingMode::PreviousRead => (state.phi_k, state.c_k),
        AddressingMode::MemoryLstm => match forced_key_summary {
            Some(h) => (h, state.c_k),
            None => {
                let lstm = params
                    .key_lstm
                    .as_ref()
                    .ok_or_else(|| contract_err!("mode m needs Memory-LSTM parameters"))?;
                lstm_step(g, lstm, state.h_k, state.c_k, state.phi_k, None, config.standard_lstm_output)?
            }
        },
    };
    let from_decoder = g.matmul(params.w_d, dec_h_prev)?;
    let query = match config.mode {
        AddressingMode::DecoderOnly => from_decoder,
        _ => {
            let from_keys = g.matmul(params.w_k, h_k)?;
            g.add(from_keys, from_decoder)?
        }
    };
    let mut per_key = Vec::with_capacity(memory.len());
    for &p in &memory.projected {
        let s = g.add(query, p)?;
        let s = g.tanh(s)?;
        per_key.push(g.matmul(params.w, s)?);
    }
    let scores = g.concat(&per_key)?;
    let alpha = g.softmax(scores)?;
    let phi_k = g.weighted_sum(alpha, &memory.keys)?;
    Ok(AddressingState { alpha, h_k, c_k, phi_k, query: Some(query), scores: Some(scores) })
}

/// Value read `sum_i alpha_i v_i`.
pub fn read_values(g: &mut Graph, alpha: NodeId, memory: &Memory) -> Result<NodeId> {
    g.weighted_sum(alpha, &memory.values)
}

use alloc::vec::Vec;

use super::ModelParams;
use crate::data::TokenId;
use crate::error::Result;
use crate::nn::{embed, linear, lstm_step, softmax};
use crate::tensor::{Graph, NodeId, Tensor};

/// Decoder LSTM state before step `t`, with the token fed at that step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderState {
    pub h: NodeId,
    pub c: NodeId,
    pub prev_token: TokenId,
    pub t: usize,
}

impl DecoderState {
    /// State for the next step after `out`, feeding `token`.
    pub fn advance(&self, out: &DecodeOutput, token: TokenId) -> DecoderState {
        DecoderState { h: out.h, c: out.c, prev_token: token, t: self.t + 1 }
    }
}

/// Zero hidden and cell state, BOS as the first input.
pub fn init_decoder(g: &mut Graph, hidden_dim: usize) -> Result<DecoderState> {
    let zero = g.constant(Tensor::zeros(&[hidden_dim]))?;
    Ok(DecoderState { h: zero, c: zero, prev_token: TokenId::BOS, t: 1 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutput {
    pub h: NodeId,
    pub c: NodeId,
    pub logits: NodeId,
    /// Softmax of `logits`.
    pub probs: Vec<f64>,
}

/// Embeds the previous token, runs the context-fed decoder LSTM on the value
/// read, and maps `[h; x; read]` to vocabulary logits.
pub fn decode_step(
    g: &mut Graph,
    params: &ModelParams<NodeId>,
    state: &DecoderState,
    value_read: NodeId,
    standard_output: bool,
) -> Result<DecodeOutput> {
    let x = embed(g, params.embedding, state.prev_token)?;
    let (h, c) = lstm_step(g, &params.decoder, state.h, state.c, x, Some(value_read), standard_output)?;
    let features = g.concat(&[h, x, value_read])?;
    let logits = linear(g, params.readout_w, features, Some(params.readout_b))?;
    let probs = softmax(g.value(logits).data());
    Ok(DecodeOutput { h, c, logits, probs })
}

use alloc::vec::Vec;

use super::{
    address_keys_with, build_keys, build_values, decode_step, init_addressing, init_decoder,
    read_values, AddressingState, DecodeOutput, DecoderState, Memory, Model, ModelConfig,
    ModelParams,
};
use crate::data::Episode;
use crate::error::{contract_err, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Everything produced by one decoding step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub addressing: AddressingState,
    pub value_read: NodeId,
    pub decode: DecodeOutput,
}

/// Bound parameters and memory of one episode inside some graph.
///
/// Each step runs: address keys, read values, decoder LSTM, readout.
#[derive(Clone, Debug)]
pub struct Session {
    pub config: ModelConfig,
    pub params: ModelParams<NodeId>,
    pub memory: Memory,
}

impl Session {
    pub fn bind(
        g: &mut Graph,
        config: &ModelConfig,
        params: ModelParams<NodeId>,
        frames: &[NodeId],
        values: Vec<NodeId>,
    ) -> Result<Self> {
        if frames.len() > config.max_frames {
            return Err(contract_err!("{} frames exceed the limit of {}", frames.len(), config.max_frames));
        }
        let keys = build_keys(g, frames, config.key_mode, params.encoder.as_ref(), config.standard_lstm_output)?;
        let memory = Memory::new(g, keys, values, params.addressing.u_a)?;
        Ok(Session { config: config.clone(), params, memory })
    }

    pub fn start(&self, g: &mut Graph) -> Result<(AddressingState, DecoderState)> {
        Ok((init_addressing(g, &self.memory)?, init_decoder(g, self.config.hidden_dim)?))
    }

    pub fn step(&self, g: &mut Graph, addr: &AddressingState, dec: &DecoderState) -> Result<StepOutput> {
        self.step_with(g, addr, dec, None)
    }

    /// [`Session::step`] with the Memory-LSTM output optionally replaced.
    pub fn step_with(
        &self,
        g: &mut Graph,
        addr: &AddressingState,
        dec: &DecoderState,
        forced_key_summary: Option<NodeId>,
    ) -> Result<StepOutput> {
        let addressing = address_keys_with(
            g,
            &self.config,
            &self.params.addressing,
            &self.memory,
            addr,
            dec.h,
            forced_key_summary,
        )?;
        let value_read = read_values(g, addressing.alpha, &self.memory)?;
        let decode = decode_step(g, &self.params, dec, value_read, self.config.standard_lstm_output)?;
        Ok(StepOutput { addressing, value_read, decode })
    }
}

/// A fresh graph holding one episode's session.
#[derive(Clone, Debug)]
pub struct EpisodeGraph {
    pub graph: Graph,
    pub session: Session,
}

impl EpisodeGraph {
    /// Binds `model` (as parameters when `trainable`, else as constants) and the
    /// episode's frames and values (always constants).
    pub fn new(model: &Model, episode: &Episode, trainable: bool) -> Result<Self> {
        let mut g = Graph::new();
        let params = model
            .params
            .try_map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })?;
        let frames = episode
            .frames
            .iter()
            .map(|f| g.constant(Tensor::vector(f.clone())?))
            .collect::<Result<Vec<_>>>()?;
        let values = build_values(episode.value_source(model.config.region_top))?
            .into_iter()
            .map(|v| g.constant(Tensor::vector(v)?))
            .collect::<Result<Vec<_>>>()?;
        let session = Session::bind(&mut g, &model.config, params, &frames, values)?;
        Ok(EpisodeGraph { graph: g, session })
    }

    pub fn start(&mut self) -> Result<(AddressingState, DecoderState)> {
        self.session.start(&mut self.graph)
    }

    pub fn step(&mut self, addr: &AddressingState, dec: &DecoderState) -> Result<StepOutput> {
        self.session.step(&mut self.graph, addr, dec)
    }
}

//! The key-value memory captioner: parameters, memory construction and
//! addressing, the decoder step and the teacher-forced sequence loss.

mod decoder;
mod loss;
mod memory;
mod session;

pub use decoder::{decode_step, init_decoder, DecodeOutput, DecoderState};
pub use loss::{caption_nll, sequence_loss, SequenceLoss};
pub use memory::{
    address_keys, address_keys_with, build_keys, build_values, init_addressing, read_values,
    AddressingState, Memory, MemorySlot, ValueSource,
};
pub use session::{EpisodeGraph, Session, StepOutput};

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{contract_err, shape_err, Error, Result};
use crate::nn::{LstmDims, LstmParams};
use crate::optim::{Init, ParamSpec};
use crate::tensor::Tensor;

/// How the attention query is formed at each step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AddressingMode {
    /// Query from the previous decoder state only.
    DecoderOnly,
    /// Query also sees the previous key read directly.
    PreviousRead,
    /// Query also sees a Memory-LSTM run over the previous key reads.
    MemoryLstm,
}

impl AddressingMode {
    pub const ALL: [AddressingMode; 3] =
        [AddressingMode::DecoderOnly, AddressingMode::PreviousRead, AddressingMode::MemoryLstm];

    pub fn as_str(self) -> &'static str {
        match self {
            AddressingMode::DecoderOnly => "none",
            AddressingMode::PreviousRead => "t",
            AddressingMode::MemoryLstm => "m",
        }
    }
}

impl fmt::Display for AddressingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AddressingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AddressingMode::DecoderOnly),
            "t" => Ok(AddressingMode::PreviousRead),
            "m" => Ok(AddressingMode::MemoryLstm),
            _ => Err(contract_err!("unknown addressing mode {s:?} (expected none, t or m)")),
        }
    }
}

/// How keys are derived from frame features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KeyMode {
    /// Features are the keys.
    Direct,
    /// Keys are the hidden states of an encoder LSTM run over the features.
    Rnn,
}

impl KeyMode {
    pub const ALL: [KeyMode; 2] = [KeyMode::Direct, KeyMode::Rnn];

    pub fn as_str(self) -> &'static str {
        match self {
            KeyMode::Direct => "direct",
            KeyMode::Rnn => "rnn",
        }
    }
}

impl fmt::Display for KeyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KeyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(KeyMode::Direct),
            "rnn" => Ok(KeyMode::Rnn),
            _ => Err(contract_err!("unknown key mode {s:?} (expected direct or rnn)")),
        }
    }
}

pub const DEFAULT_MAX_FRAMES: usize = 28;
pub const DEFAULT_REGION_TOP: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: AddressingMode,
    pub key_mode: KeyMode,
    pub feature_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub vocab_size: usize,
    pub max_frames: usize,
    /// Regions pooled per frame when values come from region sets.
    pub region_top: usize,
    /// Use `h = o * tanh(c)` instead of `h = o * c` in every LSTM.
    pub standard_lstm_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mode: AddressingMode::MemoryLstm,
            key_mode: KeyMode::Direct,
            feature_dim: 16,
            key_dim: 16,
            value_dim: 16,
            hidden_dim: 32,
            embed_dim: 16,
            attn_dim: 16,
            vocab_size: 20,
            max_frames: DEFAULT_MAX_FRAMES,
            region_top: DEFAULT_REGION_TOP,
            standard_lstm_output: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("attn_dim", self.attn_dim),
            ("max_frames", self.max_frames),
            ("region_top", self.region_top),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(contract_err!("{name} must be at least 1"));
        }
        if self.vocab_size < 4 {
            return Err(contract_err!("vocab_size must cover the 4 reserved ids"));
        }
        if self.key_mode == KeyMode::Direct && self.feature_dim != self.key_dim {
            return Err(contract_err!(
                "direct keys need feature_dim == key_dim ({} != {})",
                self.feature_dim,
                self.key_dim
            ));
        }
        Ok(())
    }

    pub fn readout_width(&self) -> usize {
        self.hidden_dim + self.embed_dim + self.value_dim
    }
}

/// Attention parameters: `q = W_k h_k + W_d h`, `e_i = w . tanh(q + U_a k_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AddressingParams<P> {
    pub w_k: P,
    pub w_d: P,
    pub u_a: P,
    pub w: P,
    /// Memory-LSTM over previous key reads; present exactly in mode `m`.
    pub key_lstm: Option<LstmParams<P>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<P> {
    pub embedding: P,
    pub encoder: Option<LstmParams<P>>,
    pub addressing: AddressingParams<P>,
    pub decoder: LstmParams<P>,
    pub readout_w: P,
    pub readout_b: P,
}

impl<P> ModelParams<P> {
    pub fn try_map<Q, E>(&self, mut f: impl FnMut(&P) -> Result<Q, E>) -> Result<ModelParams<Q>, E> {
        let embedding = f(&self.embedding)?;
        let encoder = match &self.encoder {
            Some(e) => Some(e.try_map(&mut f)?),
            None => None,
        };
        let a = &self.addressing;
        let addressing = AddressingParams {
            w_k: f(&a.w_k)?,
            w_d: f(&a.w_d)?,
            u_a: f(&a.u_a)?,
            w: f(&a.w)?,
            key_lstm: match &a.key_lstm {
                Some(k) => Some(k.try_map(&mut f)?),
                None => None,
            },
        };
        let decoder = self.decoder.try_map(&mut f)?;
        Ok(ModelParams {
            embedding,
            encoder,
            addressing,
            decoder,
            readout_w: f(&self.readout_w)?,
            readout_b: f(&self.readout_b)?,
        })
    }

    /// Visits every parameter with a stable name, in a fixed order.
    pub fn for_each<'a>(&'a self, f: &mut impl FnMut(String, &'a P)) {
        f("embedding".into(), &self.embedding);
        if let Some(e) = &self.encoder {
            e.for_each("encoder", f);
        }
        let a = &self.addressing;
        f("addr.w_k".into(), &a.w_k);
        f("addr.w_d".into(), &a.w_d);
        f("addr.u_a".into(), &a.u_a);
        f("addr.w".into(), &a.w);
        if let Some(k) = &a.key_lstm {
            k.for_each("addr.key_lstm", f);
        }
        self.decoder.for_each("decoder", f);
        f("readout.w".into(), &self.readout_w);
        f("readout.b".into(), &self.readout_b);
    }

    /// Mutable visit in the order of [`ModelParams::for_each`].
    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        f(&mut self.embedding);
        if let Some(e) = &mut self.encoder {
            e.for_each_mut(f);
        }
        let a = &mut self.addressing;
        f(&mut a.w_k);
        f(&mut a.w_d);
        f(&mut a.u_a);
        f(&mut a.w);
        if let Some(k) = &mut a.key_lstm {
            k.for_each_mut(f);
        }
        self.decoder.for_each_mut(f);
        f(&mut self.readout_w);
        f(&mut self.readout_b);
    }

    pub fn to_vec(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.for_each(&mut |n, p| out.push((n, p)));
        out
    }
}

fn lstm_spec(dims: LstmDims) -> LstmParams<ParamSpec> {
    LstmParams::zeros(dims)
        .try_map(|t| Ok::<_, Error>(ParamSpec::fan_in(t.dims())))
        .expect("infallible")
        .with_forget_bias()
}

impl LstmParams<ParamSpec> {
    fn with_forget_bias(mut self) -> Self {
        self.bias.forget.init = Init::Constant(1.0);
        self
    }
}

impl ModelParams<ParamSpec> {
    /// Shapes and initializers for `config`.
    pub fn spec(config: &ModelConfig) -> Self {
        let c = config;
        let (v, dk, dh, de, dv, a) =
            (c.vocab_size, c.key_dim, c.hidden_dim, c.embed_dim, c.value_dim, c.attn_dim);
        let m = |dims: &[usize]| ParamSpec::fan_in(dims);
        ModelParams {
            embedding: m(&[v, de]),
            encoder: (c.key_mode == KeyMode::Rnn)
                .then(|| lstm_spec(LstmDims { hidden: dk, input: c.feature_dim, context: None })),
            addressing: AddressingParams {
                w_k: m(&[a, dk]),
                w_d: m(&[a, dh]),
                u_a: m(&[a, dk]),
                w: ParamSpec { dims: alloc::vec![a], init: Init::Uniform(1.0 / libm::sqrt(a as f64)) },
                key_lstm: (c.mode == AddressingMode::MemoryLstm)
                    .then(|| lstm_spec(LstmDims { hidden: dk, input: dk, context: None })),
            },
            decoder: lstm_spec(LstmDims { hidden: dh, input: de, context: Some(dv) }),
            readout_w: m(&[v, c.readout_width()]),
            readout_b: ParamSpec { dims: alloc::vec![v], init: Init::Constant(0.0) },
        }
    }
}

/// Parameters together with the configuration that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl Model {
    /// Seeded random initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let spec = ModelParams::spec(&config);
        let mut rng = crate::optim::init_rng(seed);
        let params = spec.try_map(|s| Ok::<_, Error>(s.sample(&mut rng)))?;
        Ok(Model { config, params })
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::spec(&config).try_map(|s| Ok::<_, Error>(Tensor::zeros(&s.dims)))?;
        Ok(Model { config, params })
    }

    /// Builds a model from named tensors, checking names and dims against `config`.
    pub fn from_named(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Model::zeros(config)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params.to_vec().into_iter().map(|(n, t)| (n, t.dims().to_vec())).collect();
        if expected.len() != named.len() {
            return Err(shape_err!("expected {} parameters, got {}", expected.len(), named.len()));
        }
        for ((name, dims), (got_name, t)) in expected.iter().zip(&named) {
            if name != got_name || dims[..] != *t.dims() {
                return Err(shape_err!(
                    "parameter {got_name} {:?} does not match expected {name} {dims:?}",
                    t.dims()
                ));
            }
        }
        let mut it = named.into_iter().map(|(_, t)| t);
        model.params.for_each_mut(&mut |p| *p = it.next().expect("length checked"));
        Ok(model)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.params.to_vec()
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.params.for_each(&mut |_, t| n += t.len());
        n
    }

    pub fn param_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.params.for_each(&mut |_, t| out.push(t.len()));
        out
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        write!(
            f,
            "mode={} keys={} d_k={} d_v={} d_h={} d_e={} a={} vocab={} params={}",
            c.mode,
            c.key_mode,
            c.key_dim,
            c.value_dim,
            c.hidden_dim,
            c.embed_dim,
            c.attn_dim,
            c.vocab_size,
            self.param_count()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optional_blocks_follow_modes() {
        let mut c = ModelConfig { mode: AddressingMode::PreviousRead, ..Default::default() };
        let m = Model::new(c.clone(), 1).unwrap();
        assert!(m.params.addressing.key_lstm.is_none());
        assert!(m.params.encoder.is_none());
        c.mode = AddressingMode::MemoryLstm;
        c.key_mode = KeyMode::Rnn;
        c.feature_dim = 5;
        let m = Model::new(c, 1).unwrap();
        let k = m.params.addressing.key_lstm.as_ref().unwrap();
        assert_eq!(k.dims().unwrap(), LstmDims { hidden: 16, input: 16, context: None });
        let e = m.params.encoder.as_ref().unwrap();
        assert_eq!(e.dims().unwrap(), LstmDims { hidden: 16, input: 5, context: None });
        assert!(m.params.decoder.bias.forget.data().iter().all(|&b| b == 1.0));
    }

    #[test]
    fn config_validation() {
        let c = ModelConfig { feature_dim: 3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { vocab_size: 3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = ModelConfig { attn_dim: 0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!("x".parse::<AddressingMode>().is_err());
        assert_eq!("m".parse::<AddressingMode>().unwrap(), AddressingMode::MemoryLstm);
        assert_eq!("rnn".parse::<KeyMode>().unwrap(), KeyMode::Rnn);
    }

    #[test]
    fn named_round_trip() {
        let m = Model::new(ModelConfig::default(), 3).unwrap();
        let named: Vec<(String, Tensor)> =
            m.named_params().into_iter().map(|(n, t)| (n, t.clone())).collect();
        assert_eq!(Model::from_named(m.config.clone(), named.clone()).unwrap(), m);
        let mut bad = named;
        bad[0].1 = Tensor::zeros(&[3, 3]);
        assert!(Model::from_named(m.config.clone(), bad).is_err());
    }
}

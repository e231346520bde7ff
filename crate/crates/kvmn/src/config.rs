//! Flat JSON configuration with `--key=value` overrides.

use std::path::Path;

use kvmn_core::model::{AddressingMode, KeyMode, ModelConfig, DEFAULT_MAX_FRAMES, DEFAULT_REGION_TOP};
use kvmn_core::optim::{AdadeltaConfig, DEFAULT_CLIP, DEFAULT_EPS, DEFAULT_RHO};
use kvmn_core::search::{BeamConfig, DEFAULT_BEAM_WIDTH, DEFAULT_MAX_LEN};
use kvmn_core::train::TaskKind;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{CliError, CliResult};

pub const SEED_ENV: &str = "KVMN_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Addressing mode: `none`, `t` or `m`.
    pub mode: String,
    /// Key construction: `direct` or `rnn`.
    pub key_mode: String,
    pub feature_dim: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    /// Synthetic vocabulary size; datasets derive theirs from the captions.
    pub vocab_size: usize,
    pub min_count: usize,
    /// Frames per synthetic episode.
    pub frames: usize,
    pub max_frames: usize,
    pub region_top: usize,
    /// Synthetic task: `copy` or `recall`.
    pub task: String,
    pub train_data: Option<String>,
    pub eval_data: Option<String>,
    /// Synthetic episodes used by `eval`, `decode` and `gen-data`.
    pub episodes: usize,
    pub batch: usize,
    pub steps: u64,
    /// Falls back to `KVMN_SEED`, then to 1.
    pub seed: Option<u64>,
    pub rho: f64,
    pub eps: f64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub clip: f64,
    pub checkpoint_every: u64,
    pub out_dir: String,
    pub checkpoint: Option<String>,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_normalize: bool,
    pub standard_lstm_output: bool,
    pub bleu_smoothing: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            mode: "m".into(),
            key_mode: "direct".into(),
            feature_dim: 16,
            key_dim: 16,
            value_dim: 16,
            hidden_dim: 32,
            embed_dim: 16,
            attn_dim: 16,
            vocab_size: 20,
            min_count: 1,
            frames: 10,
            max_frames: DEFAULT_MAX_FRAMES,
            region_top: DEFAULT_REGION_TOP,
            task: "copy".into(),
            train_data: None,
            eval_data: None,
            episodes: 64,
            batch: 16,
            steps: 1000,
            seed: None,
            rho: DEFAULT_RHO,
            eps: DEFAULT_EPS,
            clip: DEFAULT_CLIP,
            checkpoint_every: 0,
            out_dir: "run".into(),
            checkpoint: None,
            beam_width: DEFAULT_BEAM_WIDTH,
            max_len: DEFAULT_MAX_LEN,
            length_normalize: false,
            standard_lstm_output: false,
            bleu_smoothing: false,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Interprets `raw` with the JSON type of the key's current value.
fn parse_like(current: &Value, key: &str, raw: &str) -> CliResult<Value> {
    let bad = || usage(format!("invalid value {raw:?} for --{key}"));
    Ok(match current {
        Value::String(_) => Value::String(raw.into()),
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(_) => serde_json::from_str::<serde_json::Number>(raw).map(Value::Number).map_err(|_| bad())?,
        // Optional keys: numbers stay numbers, anything else is a string.
        Value::Null => match serde_json::from_str::<serde_json::Number>(raw) {
            Ok(n) => Value::Number(n),
            Err(_) if raw == "null" => Value::Null,
            Err(_) => Value::String(raw.into()),
        },
        _ => return Err(bad()),
    })
}

impl Config {
    /// Reads a JSON config file; missing keys keep their defaults.
    pub fn load(path: &Path) -> CliResult<Config> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }

    /// Applies `--key=value` flags on top of `self`.
    pub fn with_overrides(&self, flags: &[String]) -> CliResult<Config> {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            unreachable!("config serializes to an object")
        };
        for flag in flags {
            let body = flag.strip_prefix("--").ok_or_else(|| usage(format!("expected --key=value, got {flag:?}")))?;
            let (key, raw) = body.split_once('=').ok_or_else(|| usage(format!("expected --key=value, got {flag:?}")))?;
            let key = key.replace('-', "_");
            let current = map.get(&key).ok_or_else(|| usage(format!("unknown option --{key}")))?;
            let value = parse_like(current, &key, raw)?;
            map.insert(key, value);
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| usage(e.to_string()))
    }

    /// Config file (if any) plus flags; flags win.
    pub fn resolve(path: Option<&Path>, flags: &[String]) -> CliResult<Config> {
        let base = match path {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let config = base.with_overrides(flags)?;
        config.validate()?;
        Ok(config)
    }

    pub fn seed(&self) -> CliResult<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={v:?} is not an integer"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }

    pub fn addressing_mode(&self) -> CliResult<AddressingMode> {
        self.mode.parse().map_err(|e: kvmn_core::Error| usage(e.to_string()))
    }

    pub fn key_mode(&self) -> CliResult<KeyMode> {
        self.key_mode.parse().map_err(|e: kvmn_core::Error| usage(e.to_string()))
    }

    pub fn task(&self) -> CliResult<TaskKind> {
        self.task.parse().map_err(|e: kvmn_core::Error| usage(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.addressing_mode()?;
        self.key_mode()?;
        self.task()?;
        self.adadelta().validate().map_err(|e| usage(e.to_string()))?;
        if self.batch == 0 || self.frames == 0 || self.episodes == 0 {
            return Err(usage("batch, frames and episodes must be at least 1"));
        }
        if self.beam_width == 0 || self.max_len == 0 {
            return Err(usage("beam_width and max_len must be at least 1"));
        }
        if self.clip.is_nan() || self.clip < 0.0 {
            return Err(usage("clip must be non-negative"));
        }
        self.model_config(self.vocab_size, self.feature_dim, self.value_dim)?;
        Ok(())
    }

    /// Model shape for data with the given vocabulary and feature widths.
    pub fn model_config(&self, vocab_size: usize, feature_dim: usize, value_dim: usize) -> CliResult<ModelConfig> {
        let config = ModelConfig {
            mode: self.addressing_mode()?,
            key_mode: self.key_mode()?,
            feature_dim,
            key_dim: self.key_dim,
            value_dim,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            attn_dim: self.attn_dim,
            vocab_size,
            max_frames: self.max_frames,
            region_top: self.region_top,
            standard_lstm_output: self.standard_lstm_output,
        };
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }

    pub fn adadelta(&self) -> AdadeltaConfig {
        AdadeltaConfig { rho: self.rho, eps: self.eps }
    }

    pub fn clip_norm(&self) -> Option<f64> {
        (self.clip > 0.0).then_some(self.clip)
    }

    pub fn beam(&self) -> BeamConfig {
        BeamConfig { width: self.beam_width, max_len: self.max_len, length_normalize: self.length_normalize }
    }

    pub fn to_json(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("config serializes to an object"),
        }
    }
}

//! Binary checkpoints and their JSON sidecar.
//!
//! Layout (all integers u32 little-endian): magic `KVMN`, format version,
//! tensor count, then per tensor its name length, UTF-8 name, rank, dims and
//! the data as f64 little-endian. Parameters are stored as `param/<name>`,
//! optimizer accumulators as `opt/<name>/sq_grad` and `opt/<name>/sq_delta`,
//! and the step counter as the one-element tensor `step`.
//!
//! The configuration and vocabulary live next to it in `<file>.json`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use kvmn_core::data::Vocabulary;
use kvmn_core::model::Model;
use kvmn_core::optim::{Adadelta, AdadeltaState};
use kvmn_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"KVMN";
pub const VERSION: u32 = 1;

fn data_err(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

/// Serializes named tensors in the order given.
pub fn write_tensors(w: &mut impl Write, tensors: &[(String, Tensor)]) -> CliResult<()> {
    let u32_of = |n: usize| u32::try_from(n).map_err(|_| data_err(format!("{n} does not fit in 32 bits")));
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32_of(tensors.len())?.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&u32_of(name.len())?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.rank())?.to_le_bytes())?;
        for &d in t.dims() {
            w.write_all(&u32_of(d)?.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> CliResult<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| data_err("checkpoint truncated"))?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors(r: &mut impl Read) -> CliResult<Vec<(String, Tensor)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| data_err("checkpoint truncated"))?;
    if &magic != MAGIC {
        return Err(data_err("not a checkpoint (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(data_err(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| data_err("checkpoint truncated"))?;
        let name = String::from_utf8(name).map_err(|_| data_err("tensor name is not UTF-8"))?;
        let rank = read_u32(r)? as usize;
        let dims = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<CliResult<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| data_err(format!("checkpoint truncated in {name}")))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(data_err("trailing bytes after the last tensor"));
    }
    Ok(out)
}

/// Configuration and vocabulary stored beside a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: Config,
    /// Model shape as trained (dataset-derived widths included).
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub value_dim: usize,
    pub vocab: Vec<String>,
}

/// Everything needed to resume training or to decode.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Adadelta,
    pub step: u64,
    pub config: Config,
    pub vocab: Vocabulary,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> =
            self.model.named_params().into_iter().map(|(n, t)| (format!("param/{n}"), t.clone())).collect();
        for ((name, t), s) in self.model.named_params().iter().zip(&self.optimizer.states) {
            let dims = t.dims().to_vec();
            out.push((format!("opt/{name}/sq_grad"), Tensor::new(dims.clone(), s.sq_grad.clone()).expect("same size")));
            out.push((format!("opt/{name}/sq_delta"), Tensor::new(dims, s.sq_delta.clone()).expect("same size")));
        }
        out.push(("step".into(), Tensor::vector(vec![self.step as f64]).expect("one element")));
        out
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut buf = Vec::new();
        write_tensors(&mut buf, &self.tensors())?;
        fs::write(path, buf)?;
        let c = &self.model.config;
        let side = Sidecar {
            config: self.config.clone(),
            vocab_size: c.vocab_size,
            feature_dim: c.feature_dim,
            value_dim: c.value_dim,
            vocab: self.vocab.tokens().to_vec(),
        };
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        fs::write(sidecar_path(path), text)?;
        Ok(())
    }

    /// Loads a checkpoint, refusing tensors whose names or dims disagree
    /// with the configuration in its sidecar.
    pub fn load(path: &Path) -> CliResult<Checkpoint> {
        let side: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let bytes = fs::read(path)?;
        let tensors = read_tensors(&mut bytes.as_slice())?;
        Self::from_parts(side, tensors)
    }

    pub fn from_parts(side: Sidecar, tensors: Vec<(String, Tensor)>) -> CliResult<Checkpoint> {
        let model_config = side.config.model_config(side.vocab_size, side.feature_dim, side.value_dim)?;
        let vocab = Vocabulary::from_tokens(side.vocab.iter().skip(4).cloned());
        if vocab.tokens() != side.vocab.as_slice() || vocab.len() != side.vocab_size {
            return Err(data_err("sidecar vocabulary does not match the model's vocab_size"));
        }
        let n = Model::zeros(model_config.clone())?.param_sizes().len();
        if tensors.len() != 3 * n + 1 {
            return Err(data_err(format!("expected {} tensors, found {}", 3 * n + 1, tensors.len())));
        }
        let mut it = tensors.into_iter();
        let mut params = Vec::with_capacity(n);
        for (name, t) in it.by_ref().take(n) {
            let bare = name.strip_prefix("param/").ok_or_else(|| data_err(format!("unexpected tensor {name}")))?;
            params.push((bare.to_string(), t));
        }
        let model = Model::from_named(model_config, params)?;
        let mut optimizer = Adadelta::new(&model, side.config.adadelta())?;
        for ((name, p), state) in model.named_params().iter().zip(optimizer.states.iter_mut()) {
            let mut next = |part: &str| -> CliResult<Vec<f64>> {
                let (got, t) = it.next().ok_or_else(|| data_err("missing optimizer state"))?;
                if got != format!("opt/{name}/{part}") || t.dims() != p.dims() {
                    return Err(data_err(format!("tensor {got} {:?} does not match opt/{name}/{part}", t.dims())));
                }
                Ok(t.into_data())
            };
            *state = AdadeltaState { sq_grad: next("sq_grad")?, sq_delta: next("sq_delta")? };
        }
        let (name, step) = it.next().ok_or_else(|| data_err("missing step counter"))?;
        let step = match (name.as_str(), step.data()) {
            ("step", &[s]) if s >= 0.0 && s.fract() == 0.0 => s as u64,
            _ => return Err(data_err("malformed step counter")),
        };
        Ok(Checkpoint { model, optimizer, step, config: side.config, vocab })
    }
}

//! Minibatch training with teacher forcing, and teacher-forced accuracy.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{synth, Episode, SynthSpace, TokenId};
use crate::error::{contract_err, Result};
use crate::model::{caption_nll, build_values, sequence_loss, AddressingMode, EpisodeGraph, KeyMode, Model, ModelConfig, Session};
use crate::optim::{clip_gradients, global_norm, Adadelta};
use crate::search::argmax_candidate;
use crate::tensor::{grad_check, Tensor};

/// One training item: an episode and one of its captions.
pub type Item<'a> = (&'a Episode, &'a [TokenId]);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Mean per-item loss before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Factor applied by clipping (1 when none).
    pub clip_factor: f64,
}

/// Computes the batch gradient, optionally clips it, and applies one
/// Adadelta update.
pub fn train_step(model: &mut Model, opt: &mut Adadelta, items: &[Item<'_>], clip: Option<f64>) -> Result<StepReport> {
    let out = sequence_loss(model, items, true)?;
    let mut grads = out.grads.expect("gradients were requested");
    let grad_norm = global_norm(&grads);
    let clip_factor = match clip {
        Some(max) => clip_gradients(&mut grads, max)?,
        None => 1.0,
    };
    opt.step(model, &grads)?;
    Ok(StepReport { loss: out.loss, grad_norm, clip_factor })
}

/// Correct and total counts of teacher-forced next-token predictions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 { 0.0 } else { self.correct as f64 / self.total as f64 }
    }
}

impl core::ops::AddAssign for Accuracy {
    fn add_assign(&mut self, o: Accuracy) {
        self.correct += o.correct;
        self.total += o.total;
    }
}

/// Teacher-forced accuracy over the non-PAD targets of every item, EOS included.
/// Predictions follow the greedy rule (PAD/BOS excluded, lowest id on ties).
pub fn token_accuracy(model: &Model, items: &[Item<'_>]) -> Result<Accuracy> {
    let mut acc = Accuracy::default();
    for &(episode, caption) in items {
        if caption.first() != Some(&TokenId::BOS) {
            return Err(contract_err!("caption of {} does not start with BOS", episode.id));
        }
        let mut eg = EpisodeGraph::new(model, episode, false)?;
        let (mut addr, mut dec) = eg.start()?;
        for &target in &caption[1..] {
            let out = eg.step(&addr, &dec)?;
            if target != TokenId::PAD {
                let (pred, _) = argmax_candidate(eg.graph.value(out.decode.logits).data());
                acc.total += 1;
                acc.correct += usize::from(pred == target);
            }
            dec = dec.advance(&out.decode, target);
            addr = out.addressing;
        }
    }
    Ok(acc)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Copy,
    Recall,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Recall => "recall",
        }
    }
}

impl core::str::FromStr for TaskKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(TaskKind::Copy),
            "recall" => Ok(TaskKind::Recall),
            _ => Err(contract_err!("unknown task {s:?} (expected copy or recall)")),
        }
    }
}

/// An endless stream of synthetic episodes over one shared feature space.
#[derive(Clone, Debug)]
pub struct SynthTask {
    pub kind: TaskKind,
    pub frames: usize,
    space: SynthSpace,
}

impl SynthTask {
    pub fn new(kind: TaskKind, frames: usize, vocab_size: usize, dim: usize) -> Result<Self> {
        if frames == 0 {
            return Err(contract_err!("synthetic episodes need at least one frame"));
        }
        Ok(SynthTask { kind, frames, space: SynthSpace::new(vocab_size, dim)? })
    }

    pub fn space(&self) -> &SynthSpace {
        &self.space
    }

    pub fn episode(&self, seed: u64) -> Result<Episode> {
        match self.kind {
            TaskKind::Copy => synth::copy_in(&self.space, self.frames, seed),
            TaskKind::Recall => synth::recall_in(&self.space, self.frames, seed),
        }
    }

    /// `count` episodes drawn from stream `stream` of `seed`. Training step `s`
    /// uses stream `s`; held-out sets use streams counting down from `u64::MAX`.
    pub fn episodes(&self, seed: u64, stream: u64, count: usize) -> Result<Vec<Episode>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..count).map(|_| self.episode(rng.next_u64())).collect()
    }
}

/// Shuffled minibatches of item indices, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    pub fn new(items: usize, batch: usize, seed: u64) -> Result<Self> {
        if items == 0 || batch == 0 {
            return Err(contract_err!("batching needs at least one item and a positive batch size"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..items).collect();
        order.shuffle(&mut rng);
        Ok(Batcher { order, pos: 0, batch: batch.min(items), rng })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.batch);
        while out.len() < self.batch {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Tiny configuration for gradient checks: vocabulary 7, every dim at most 8.
/// Synthetic values share the frame width, so `value_dim == feature_dim`.
pub fn grad_check_config(mode: AddressingMode, key_mode: KeyMode) -> ModelConfig {
    ModelConfig {
        mode,
        key_mode,
        feature_dim: 6,
        key_dim: if key_mode == KeyMode::Direct { 6 } else { 5 },
        value_dim: 6,
        hidden_dim: 8,
        embed_dim: 4,
        attn_dim: 5,
        vocab_size: 7,
        ..ModelConfig::default()
    }
}

/// Maximum relative error between backpropagated and central-difference
/// gradients of the caption loss with respect to every model parameter.
pub fn check_gradients(model: &Model, episode: &Episode, caption: &[TokenId], eps: f64) -> Result<f64> {
    let params: Vec<Tensor> = model.named_params().into_iter().map(|(_, t)| t.clone()).collect();
    let values: Vec<Tensor> = build_values(episode.value_source(model.config.region_top))?
        .into_iter()
        .map(Tensor::vector)
        .collect::<Result<_>>()?;
    let frames: Vec<Tensor> = episode.frames.iter().map(|f| Tensor::vector(f.clone())).collect::<Result<_>>()?;
    grad_check(&params, eps, |g, ids| {
        let mut next = ids.iter().copied();
        let bound = model.params.try_map(|_| next.next().ok_or_else(|| contract_err!("missing parameter node")))?;
        let f = frames.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let v = values.iter().map(|t| g.constant(t.clone())).collect::<Result<Vec<_>>>()?;
        let session = Session::bind(g, &model.config, bound, &f, v)?;
        Ok(caption_nll(g, &session, caption)?.0)
    })
}

//! The `train`, `eval`, `decode`, `gradcheck` and `gen-data` commands.

use std::fs::{self, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kvmn_core::data::{gen_copy_episode, Episode, Vocabulary};
use kvmn_core::metrics::{bleu4, EvalPair};
use kvmn_core::model::{build_values, AddressingMode, KeyMode, Model};
use kvmn_core::optim::Adadelta;
use kvmn_core::search::beam_search;
use kvmn_core::tensor::DEFAULT_EPS;
use kvmn_core::train::{
    check_gradients, grad_check_config, token_accuracy, train_step, Accuracy, Batcher, Item, SynthTask,
};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::dataset::{load_dataset, read_jsonl, vocab_of, write_jsonl, RawEpisode};
use crate::{CliError, CliResult};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOL: f64 = 1e-4;
/// Frames and vocabulary of the gradcheck episodes.
pub const GRADCHECK_FRAMES: usize = 5;
pub const GRADCHECK_VOCAB: usize = 7;

pub const FINAL_CHECKPOINT: &str = "model.kvmn";
pub const LOSS_LOG: &str = "loss.jsonl";

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Different stream of the seed for data than for initialization.
fn data_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

enum Source {
    Synthetic(SynthTask),
    Dataset { episodes: Vec<Episode>, items: Vec<(usize, usize)>, batcher: Box<Batcher> },
}

/// Training data, vocabulary and the feature and value widths they imply.
struct Prepared {
    source: Source,
    vocab: Vocabulary,
    feature_dim: usize,
    value_dim: usize,
}

fn prepare(config: &Config, seed: u64) -> CliResult<Prepared> {
    match &config.train_data {
        None => {
            let task = SynthTask::new(config.task()?, config.frames, config.vocab_size, config.feature_dim)?;
            Ok(Prepared {
                source: Source::Synthetic(task),
                vocab: Vocabulary::synthetic(config.vocab_size),
                feature_dim: config.feature_dim,
                value_dim: config.feature_dim,
            })
        }
        Some(path) => {
            let raw = read_jsonl(Path::new(path))?;
            if raw.is_empty() {
                return Err(CliError::Data(format!("{path}: no episodes")));
            }
            let vocab = vocab_of(&raw, config.min_count);
            let episodes = load_dataset(Path::new(path), &vocab)?;
            let feature_dim = episodes[0].feature_dim();
            let value_dim = build_values(episodes[0].value_source(config.region_top))?[0].len();
            let items: Vec<(usize, usize)> = episodes
                .iter()
                .enumerate()
                .flat_map(|(e, ep)| (0..ep.captions.len()).map(move |c| (e, c)))
                .collect();
            let batcher = Box::new(Batcher::new(items.len(), config.batch, data_seed(seed))?);
            Ok(Prepared { source: Source::Dataset { episodes, items, batcher }, vocab, feature_dim, value_dim })
        }
    }
}

#[derive(Serialize)]
struct LossLine {
    step: u64,
    loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub final_loss: Option<f64>,
    pub checkpoint: PathBuf,
}

/// Trains from scratch, or resumes from `config.checkpoint`, for
/// `config.steps` more updates. Writes one loss line per update and the final
/// checkpoint to `config.out_dir`.
pub fn run_train(config: &Config) -> CliResult<TrainSummary> {
    let seed = config.seed()?;
    let mut prepared = prepare(config, seed)?;
    let model_config = config.model_config(prepared.vocab.len(), prepared.feature_dim, prepared.value_dim)?;
    let (mut model, mut opt, start, resumed) = match &config.checkpoint {
        Some(path) => {
            let ck = Checkpoint::load(Path::new(path))?;
            if ck.model.config != model_config || ck.vocab != prepared.vocab {
                return Err(CliError::Data(format!("{path} was trained with a different model shape or vocabulary")));
            }
            (ck.model, ck.optimizer, ck.step, true)
        }
        None => {
            let model = Model::new(model_config, seed)?;
            let opt = Adadelta::new(&model, config.adadelta())?;
            (model, opt, 0, false)
        }
    };
    let out = PathBuf::from(&config.out_dir);
    fs::create_dir_all(&out)?;
    let log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resumed)
        .truncate(!resumed)
        .open(out.join(LOSS_LOG))?;
    let mut log = BufWriter::new(log);
    let mut final_loss = None;
    let save = |model: &Model, opt: &Adadelta, step: u64, path: &Path| {
        Checkpoint { model: model.clone(), optimizer: opt.clone(), step, config: config.clone(), vocab: prepared.vocab.clone() }
            .save(path)
    };
    for step in start..start + config.steps {
        let report = match &mut prepared.source {
            Source::Synthetic(task) => {
                let eps = task.episodes(data_seed(seed), step, config.batch)?;
                let items: Vec<Item> = eps.iter().map(|e| (e, &e.captions[0][..])).collect();
                train_step(&mut model, &mut opt, &items, config.clip_norm())?
            }
            Source::Dataset { episodes, items, batcher } => {
                let batch: Vec<Item> = batcher
                    .next_batch()
                    .into_iter()
                    .map(|i| {
                        let (e, c) = items[i];
                        (&episodes[e], &episodes[e].captions[c][..])
                    })
                    .collect();
                train_step(&mut model, &mut opt, &batch, config.clip_norm())?
            }
        };
        serde_json::to_writer(&mut log, &LossLine { step: step + 1, loss: report.loss })?;
        log.write_all(b"\n")?;
        final_loss = Some(report.loss);
        if config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0 {
            log.flush()?;
            save(&model, &opt, step + 1, &out.join(format!("step-{}.kvmn", step + 1)))?;
        }
    }
    log.flush()?;
    let path = out.join(FINAL_CHECKPOINT);
    save(&model, &opt, start + config.steps, &path)?;
    Ok(TrainSummary { steps: start + config.steps, final_loss, checkpoint: path })
}

fn load_checkpoint(config: &Config) -> CliResult<Checkpoint> {
    let path = config.checkpoint.as_ref().ok_or_else(|| usage("this command needs --checkpoint=PATH"))?;
    Checkpoint::load(Path::new(path))
}

/// Episodes to evaluate or decode: `eval_data` when given, otherwise held-out
/// synthetic episodes of the task the checkpoint was trained on.
fn eval_episodes(config: &Config, ck: &Checkpoint) -> CliResult<Vec<Episode>> {
    let episodes = match &config.eval_data {
        Some(path) => load_dataset(Path::new(path), &ck.vocab)?,
        None => {
            if ck.config.train_data.is_some() {
                return Err(usage("the checkpoint was trained on a dataset; pass --eval_data=PATH"));
            }
            let c = &ck.model.config;
            let task = SynthTask::new(ck.config.task()?, config.frames, c.vocab_size, c.feature_dim)?;
            task.episodes(data_seed(config.seed()?), u64::MAX, config.episodes)?
        }
    };
    if episodes.is_empty() {
        return Err(CliError::Data("no episodes to evaluate".into()));
    }
    Ok(episodes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub token_acc: f64,
    pub n: usize,
}

pub fn evaluate(model: &Model, vocab: &Vocabulary, episodes: &[Episode], config: &Config) -> CliResult<EvalReport> {
    if episodes.is_empty() {
        return Err(CliError::Data("no episodes to evaluate".into()));
    }
    let mut pairs = Vec::with_capacity(episodes.len());
    let mut acc = Accuracy::default();
    for ep in episodes {
        let hyp = beam_search(model, ep, &config.beam())?;
        let refs = ep.captions.iter().map(|c| vocab.decode(c)).collect();
        pairs.push(EvalPair::new(vocab.decode(&hyp.tokens), refs)?);
        let items: Vec<Item> = ep.captions.iter().map(|c| (ep, &c[..])).collect();
        acc += token_accuracy(model, &items)?;
    }
    Ok(EvalReport { bleu4: bleu4(&pairs, config.bleu_smoothing), token_acc: acc.ratio(), n: episodes.len() })
}

pub fn run_eval(config: &Config) -> CliResult<EvalReport> {
    let ck = load_checkpoint(config)?;
    let episodes = eval_episodes(config, &ck)?;
    evaluate(&ck.model, &ck.vocab, &episodes, config)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Decoded {
    pub id: String,
    pub caption: String,
    pub log_prob: f64,
}

pub fn run_decode(config: &Config) -> CliResult<Vec<Decoded>> {
    let ck = load_checkpoint(config)?;
    eval_episodes(config, &ck)?
        .iter()
        .map(|ep| {
            let h = beam_search(&ck.model, ep, &config.beam())?;
            Ok(Decoded { id: ep.id.clone(), caption: ck.vocab.decode_text(&h.tokens), log_prob: h.log_prob })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckLine {
    pub mode: String,
    pub key_mode: String,
    pub max_rel_err: f64,
}

/// Gradient check of a tiny model in every (addressing mode, key mode)
/// combination. Fails with a numeric error if any reaches [`GRADCHECK_TOL`].
pub fn run_gradcheck(config: &Config) -> CliResult<Vec<GradcheckLine>> {
    let seed = config.seed()?;
    let mut lines = Vec::new();
    for mode in AddressingMode::ALL {
        for key_mode in [KeyMode::Direct, KeyMode::Rnn] {
            let mc = kvmn_core::model::ModelConfig {
                standard_lstm_output: config.standard_lstm_output,
                ..grad_check_config(mode, key_mode)
            };
            let model = Model::new(mc, seed)?;
            let ep = gen_copy_episode(GRADCHECK_FRAMES, GRADCHECK_VOCAB, model.config.feature_dim, data_seed(seed))?;
            let err = check_gradients(&model, &ep, &ep.captions[0], DEFAULT_EPS)?;
            lines.push(GradcheckLine { mode: mode.to_string(), key_mode: key_mode.to_string(), max_rel_err: err });
        }
    }
    Ok(lines)
}

pub fn gradcheck_failures(lines: &[GradcheckLine]) -> Vec<&GradcheckLine> {
    lines.iter().filter(|l| l.max_rel_err.is_nan() || l.max_rel_err >= GRADCHECK_TOL).collect()
}

/// Writes `config.episodes` synthetic episodes to `path` as JSON Lines.
pub fn run_gen_data(config: &Config, path: &Path) -> CliResult<usize> {
    let task = SynthTask::new(config.task()?, config.frames, config.vocab_size, config.feature_dim)?;
    let vocab = Vocabulary::synthetic(config.vocab_size);
    let raw: Vec<RawEpisode> = task
        .episodes(data_seed(config.seed()?), 0, config.episodes)?
        .iter()
        .map(|ep| RawEpisode::from_episode(ep, &vocab))
        .collect();
    write_jsonl(path, &raw)?;
    Ok(raw.len())
}

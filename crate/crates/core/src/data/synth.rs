use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Episode, Region, TokenId};
use crate::error::{contract_err, Result};

/// Seed of the fixed token projections shared by every synthetic episode.
const SPACE_SEED: u64 = 0x6b76_6d6e;
const TOKEN_KEY_SCALE: f64 = 0.5;

/// Fixed feature space of the synthetic tasks: a random token projection for
/// keys, a random embedding per token for values, and sinusoidal position codes.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpace {
    vocab_size: usize,
    dim: usize,
    key_proj: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
}

impl SynthSpace {
    pub fn new(vocab_size: usize, dim: usize) -> Result<Self> {
        if vocab_size <= TokenId::RESERVED as usize {
            return Err(contract_err!("synthetic vocabulary needs more than 4 ids, got {vocab_size}"));
        }
        if dim == 0 {
            return Err(contract_err!("feature dim must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(SPACE_SEED ^ ((vocab_size as u64) << 32) ^ dim as u64);
        let mut table = |scale: f64| -> Vec<Vec<f64>> {
            (0..vocab_size)
                .map(|_| (0..dim).map(|_| scale * rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let key_proj = table(TOKEN_KEY_SCALE);
        let values = table(1.0);
        Ok(SynthSpace { vocab_size, dim, key_proj, values })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sinusoidal code of position `i` (0-based).
    pub fn position_code(&self, i: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|j| {
                let freq = libm::pow(100.0, -((j / 2 * 2) as f64) / self.dim as f64);
                let angle = i as f64 * freq;
                if j % 2 == 0 { libm::sin(angle) } else { libm::cos(angle) }
            })
            .collect()
    }

    /// Key of a slot holding `token` whose caption rank is `rank`.
    pub fn key(&self, token: TokenId, rank: usize) -> Vec<f64> {
        self.key_proj[token.index()]
            .iter()
            .zip(self.position_code(rank))
            .map(|(t, p)| t + p)
            .collect()
    }

    /// Token-part of a key, i.e. `key(token, rank) - position_code(rank)`.
    pub fn token_key(&self, token: TokenId) -> &[f64] {
        &self.key_proj[token.index()]
    }

    pub fn value(&self, token: TokenId) -> &[f64] {
        &self.values[token.index()]
    }
}

/// Episode whose slot `i` holds `tokens[i]` and is read at caption position
/// `ranks[i]`. Values are carried as single-region sets with score 1.
pub fn gen_episode_with_ranks(
    space: &SynthSpace,
    id: &str,
    tokens: &[TokenId],
    ranks: &[usize],
) -> Result<Episode> {
    let t = tokens.len();
    if t == 0 || ranks.len() != t {
        return Err(contract_err!("need one rank per token and at least one token"));
    }
    let mut seen = vec![false; t];
    for &r in ranks {
        if r >= t || seen[r] {
            return Err(contract_err!("ranks must be a permutation of 0..{t}"));
        }
        seen[r] = true;
    }
    if let Some(bad) = tokens.iter().find(|tok| tok.is_reserved() || tok.index() >= space.vocab_size) {
        return Err(contract_err!("token {bad} is reserved or outside the vocabulary"));
    }
    let frames = tokens.iter().zip(ranks).map(|(&tok, &r)| space.key(tok, r)).collect();
    let regions = tokens
        .iter()
        .map(|&tok| vec![Region { feature: space.value(tok).to_vec(), score: 1.0 }])
        .collect();
    let mut caption = vec![TokenId::PAD; t + 2];
    caption[0] = TokenId::BOS;
    caption[t + 1] = TokenId::EOS;
    for (&tok, &r) in tokens.iter().zip(ranks) {
        caption[r + 1] = tok;
    }
    Ok(Episode { id: id.into(), frames, regions: Some(regions), captions: vec![caption] })
}

fn draw_tokens(rng: &mut ChaCha8Rng, frames: usize, vocab_size: usize) -> Vec<TokenId> {
    (0..frames)
        .map(|_| TokenId(rng.gen_range(TokenId::RESERVED..vocab_size as u32)))
        .collect()
}

/// Copy task: the caption lists the slot tokens in slot order.
pub fn gen_copy_episode(frames: usize, vocab_size: usize, dim: usize, seed: u64) -> Result<Episode> {
    let space = SynthSpace::new(vocab_size, dim)?;
    copy_in(&space, frames, seed)
}

/// Recall task: the caption lists the slot tokens in a random order, and each
/// key carries the position code of its slot's rank in that order.
pub fn gen_recall_episode(frames: usize, vocab_size: usize, dim: usize, seed: u64) -> Result<Episode> {
    let space = SynthSpace::new(vocab_size, dim)?;
    recall_in(&space, frames, seed)
}

pub(crate) fn copy_in(space: &SynthSpace, frames: usize, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = draw_tokens(&mut rng, frames, space.vocab_size);
    let ranks: Vec<usize> = (0..frames).collect();
    gen_episode_with_ranks(space, &format!("copy-{seed}"), &tokens, &ranks)
}

pub(crate) fn recall_in(space: &SynthSpace, frames: usize, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens = draw_tokens(&mut rng, frames, space.vocab_size);
    let mut ranks: Vec<usize> = (0..frames).collect();
    ranks.shuffle(&mut rng);
    gen_episode_with_ranks(space, &format!("recall-{seed}"), &tokens, &ranks)
}

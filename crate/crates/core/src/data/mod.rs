//! Episodes, tokens, vocabulary and the synthetic task generators.

pub(crate) mod synth;
mod tokenize;
mod vocab;

pub use synth::{gen_copy_episode, gen_episode_with_ranks, gen_recall_episode, SynthSpace};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, Vocabulary};

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{contract_err, shape_err, Result};

/// Vocabulary index of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(pub u32);

impl TokenId {
    pub const PAD: TokenId = TokenId(0);
    pub const BOS: TokenId = TokenId(1);
    pub const EOS: TokenId = TokenId(2);
    pub const UNK: TokenId = TokenId(3);
    /// Number of reserved ids; the first ordinary token gets this id.
    pub const RESERVED: u32 = 4;

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_reserved(self) -> bool {
        self.0 < Self::RESERVED
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A scored region feature inside one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub feature: Vec<f64>,
    pub score: f64,
}

/// One training item: per-frame features, optional per-frame region sets, and
/// one or more reference captions (each `BOS ... EOS`).
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub id: String,
    pub frames: Vec<Vec<f64>>,
    pub regions: Option<Vec<Vec<Region>>>,
    pub captions: Vec<Vec<TokenId>>,
}

impl Episode {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.frames.is_empty() {
            return Err(shape_err!("episode {}: no frames", self.id));
        }
        let d = self.feature_dim();
        if d == 0 || self.frames.iter().any(|f| f.len() != d) {
            return Err(shape_err!("episode {}: frame matrix is not rectangular", self.id));
        }
        if self.frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(crate::Error::Numeric(alloc::format!("episode {}: non-finite feature", self.id)));
        }
        if let Some(regions) = &self.regions {
            if regions.len() != self.frames.len() {
                return Err(shape_err!(
                    "episode {}: {} region sets for {} frames",
                    self.id,
                    regions.len(),
                    self.frames.len()
                ));
            }
        }
        if self.captions.is_empty() {
            return Err(contract_err!("episode {}: no captions", self.id));
        }
        for c in &self.captions {
            if c.len() < 2 || c[0] != TokenId::BOS || c.last() != Some(&TokenId::EOS) {
                return Err(contract_err!("episode {}: caption must be BOS ... EOS", self.id));
            }
            if let Some(t) = c.iter().find(|t| t.index() >= vocab_size) {
                return Err(contract_err!("episode {}: token {t} outside vocabulary", self.id));
            }
        }
        Ok(())
    }
}

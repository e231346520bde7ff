use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{tokenize, TokenId};

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token/id bijection. Ids 0..4 are PAD, BOS, EOS, UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Reserved ids followed by `tokens` in the given order. Duplicates keep
    /// their first id.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocabulary { tokens: Vec::new(), ids: BTreeMap::new() };
        for t in RESERVED.iter().map(|s| s.to_string()).chain(tokens.into_iter().map(Into::into)) {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), TokenId(v.tokens.len() as u32));
                v.tokens.push(t);
            }
        }
        v
    }

    /// Vocabulary of the synthetic tasks: `tok4`, `tok5`, ... up to `size - 1`.
    pub fn synthetic(size: usize) -> Self {
        Self::from_tokens((TokenId::RESERVED as usize..size).map(|i| format!("tok{i}")))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(TokenId::UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    /// All entries in id order, reserved ones included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Tokenizes `text` and wraps it as `BOS ... EOS`; unknown words map to UNK.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        out.push(TokenId::BOS);
        out.extend(tokenize(text).iter().map(|t| self.id(t)));
        out.push(TokenId::EOS);
        out
    }

    /// Surface tokens with PAD, BOS and EOS removed.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&t| t != TokenId::PAD && t != TokenId::BOS && t != TokenId::EOS)
            .map(|&t| self.token(t).unwrap_or(RESERVED[3]).to_string())
            .collect()
    }

    pub fn decode_text(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }
}

/// Counts tokens over `captions` and keeps those seen at least `min_count`
/// times, ordered by descending count and then lexicographically.
pub fn build_vocab<'a>(captions: impl IntoIterator<Item = &'a str>, min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in captions {
        for t in tokenize(c) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, n)| *n >= min_count.max(1)).collect();
    // BTreeMap iteration is already lexicographic; a stable sort keeps that for ties.
    entries.sort_by_key(|e| core::cmp::Reverse(e.1));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_corpus_has_reserved_ids() {
        let v = build_vocab(Vec::<&str>::new(), 1);
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("<eos>"), TokenId::EOS);
    }

    #[test]
    fn frequency_then_lexicographic() {
        let v = build_vocab(["a a b"], 1);
        assert_eq!(v.id("a"), TokenId(4));
        assert_eq!(v.id("b"), TokenId(5));
        let v = build_vocab(["zeta beta", "alpha"], 1);
        assert_eq!(v.tokens()[4..], ["alpha", "beta", "zeta"]);
        let v = build_vocab(["x y y", "x z"], 2);
        assert_eq!(v.tokens()[4..], ["x", "y"]);
        assert_eq!(v.id("z"), TokenId::UNK);
    }

    #[test]
    fn encode_decode() {
        let v = build_vocab(["a dog runs."], 1);
        let ids = v.encode("A cat runs.");
        assert_eq!(ids.first(), Some(&TokenId::BOS));
        assert_eq!(ids.last(), Some(&TokenId::EOS));
        assert_eq!(ids[2], TokenId::UNK);
        assert_eq!(v.decode(&ids), vec!["a", "<unk>", "runs", "."]);
    }

    #[test]
    fn synthetic_names() {
        let v = Vocabulary::synthetic(6);
        assert_eq!(v.len(), 6);
        assert_eq!(v.token(TokenId(5)), Some("tok5"));
    }
}

//! Corpus-level BLEU-4 with multiple references.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};

/// A hypothesis and its references, as surface tokens without BOS/EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalPair {
    pub hypothesis: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    pub fn new(hypothesis: Vec<String>, references: Vec<Vec<String>>) -> Result<Self> {
        if references.is_empty() {
            return Err(contract_err!("an evaluation pair needs at least one reference"));
        }
        Ok(EvalPair { hypothesis, references })
    }
}

fn ngrams(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus sums of clipped `n`-gram matches and hypothesis `n`-gram counts.
pub fn modified_precision(pairs: &[EvalPair], n: usize) -> (u64, u64) {
    let (mut matched, mut total) = (0u64, 0u64);
    for pair in pairs {
        let hyp = ngrams(&pair.hypothesis, n);
        let mut max_ref: BTreeMap<&[String], usize> = BTreeMap::new();
        for r in &pair.references {
            for (g, c) in ngrams(r, n) {
                let m = max_ref.entry(g).or_insert(0);
                *m = (*m).max(c);
            }
        }
        for (g, c) in hyp {
            total += c as u64;
            matched += c.min(max_ref.get(g).copied().unwrap_or(0)) as u64;
        }
    }
    (matched, total)
}

/// Length of the reference closest to `len`; the shorter one on ties.
fn closest_ref_len(len: usize, refs: &[Vec<String>]) -> usize {
    refs.iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(len), r))
        .unwrap_or(0)
}

/// BLEU-4: geometric mean of clipped 1..4-gram precisions times the brevity
/// penalty. Without `smoothing` any zero match count gives 0; with it every
/// precision becomes `(m + 1) / (t + 1)`.
pub fn bleu4(pairs: &[EvalPair], smoothing: bool) -> f64 {
    let c: usize = pairs.iter().map(|p| p.hypothesis.len()).sum();
    let r: usize = pairs.iter().map(|p| closest_ref_len(p.hypothesis.len(), &p.references)).sum();
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let (m, t) = modified_precision(pairs, n);
        let (m, t) = if smoothing { (m + 1, t + 1) } else { (m, t) };
        if m == 0 {
            return 0.0;
        }
        log_sum += libm::log(m as f64 / t as f64);
    }
    let bp = if c < r { libm::exp(1.0 - r as f64 / c as f64) } else { 1.0 };
    (bp * libm::exp(log_sum / 4.0)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn pair(h: &str, refs: &[&str]) -> EvalPair {
        EvalPair::new(toks(h), refs.iter().map(|r| toks(r)).collect()).unwrap()
    }

    #[test]
    fn clipping() {
        assert_eq!(modified_precision(&[pair("a a a", &["a"])], 1), (1, 3));
        assert_eq!(modified_precision(&[pair("", &["a"])], 1), (0, 0));
        let same = [pair("a b c d e", &["a b c d e"])];
        for n in 1..=4 {
            let (m, t) = modified_precision(&same, n);
            assert_eq!(m, t);
        }
    }

    #[test]
    fn extremes() {
        assert_eq!(bleu4(&[pair("the cat sat on the mat", &["the cat sat on the mat"])], false), 1.0);
        assert_eq!(bleu4(&[pair("w x y z", &["a b c d"])], false), 0.0);
        assert_eq!(bleu4(&[], false), 0.0);
    }

    #[test]
    fn closest_length_tie_prefers_shorter() {
        let refs = vec![toks("a b c d e f"), toks("a b")];
        assert_eq!(closest_ref_len(4, &refs), 2);
    }

    #[test]
    fn no_references_rejected() {
        assert!(EvalPair::new(toks("a"), vec![]).is_err());
    }
}

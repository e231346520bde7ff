use kvmn_core::metrics::{bleu4, modified_precision, EvalPair};
use proptest::prelude::*;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn pair(h: &str, refs: &[&str]) -> EvalPair {
    EvalPair::new(toks(h), refs.iter().map(|r| toks(r)).collect()).unwrap()
}

fn mini_corpus() -> Vec<EvalPair> {
    vec![
        pair(
            "a man is riding a horse on the beach",
            &["a man rides a horse along the beach", "a man is riding a horse"],
        ),
        pair(
            "the cat sat on the mat",
            &["the cat is sitting on the mat", "a cat sat on a mat", "there is a cat on the mat"],
        ),
        pair("two dogs are playing in the snow", &["two dogs play in the snow", "dogs are playing in the white snow"]),
    ]
}

#[test]
fn matches_reference_scorer() {
    // NLTK corpus_bleu (default weights, no smoothing) on the same corpus.
    let reference = 0.6731310916855731;
    assert!((bleu4(&mini_corpus(), false) - reference).abs() < 1e-6);
}

#[test]
fn hand_computed_brevity_penalty() {
    // 4 hypothesis tokens against a 6-token reference, all n-grams matching.
    let p = [pair("a b c d", &["a b c d e f"])];
    let expected = (1.0f64 - 6.0 / 4.0).exp();
    assert!((bleu4(&p, false) - expected).abs() < 1e-12);
}

#[test]
fn smoothing_rescues_missing_four_grams() {
    let p = [pair("a b c x", &["a b c d"])];
    assert_eq!(modified_precision(&p, 4), (0, 1));
    assert_eq!(bleu4(&p, false), 0.0);
    let s = bleu4(&p, true);
    // (4/5 * 3/4 * 2/3 * 1/2)^(1/4)
    assert!((s - (0.2f64).powf(0.25)).abs() < 1e-12, "{s}");
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from)
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(word(), 0..9)
}

fn corpus() -> impl Strategy<Value = Vec<EvalPair>> {
    prop::collection::vec(
        (sentence(), prop::collection::vec(sentence(), 1..4))
            .prop_map(|(h, r)| EvalPair::new(h, r).unwrap()),
        1..5,
    )
}

proptest! {
    #[test]
    fn score_in_unit_interval(c in corpus(), smooth in any::<bool>()) {
        let s = bleu4(&c, smooth);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn order_of_pairs_is_irrelevant(c in corpus()) {
        let mut r = c.clone();
        r.reverse();
        prop_assert!((bleu4(&c, false) - bleu4(&r, false)).abs() < 1e-12);
    }

    #[test]
    fn identical_corpus_scores_one(c in corpus()) {
        let same: Vec<EvalPair> = c
            .iter()
            .map(|p| {
                let mut h = p.hypothesis.clone();
                h.extend(["w", "x", "y", "z"].map(String::from));
                EvalPair::new(h.clone(), vec![h]).unwrap()
            })
            .collect();
        prop_assert!((bleu4(&same, false) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn own_reference_never_hurts(c in corpus(), i in any::<prop::sample::Index>()) {
        let mut more = c.clone();
        let k = i.index(more.len());
        let own = more[k].hypothesis.clone();
        more[k].references.push(own);
        prop_assert!(bleu4(&more, false) >= bleu4(&c, false) - 1e-12);
    }
}

#[test]
fn disjoint_corpus_scores_zero() {
    let p = [pair("p q r s t", &["a b c d e"]), pair("u v w x", &["f g h i"])];
    assert_eq!(bleu4(&p, false), 0.0);
}

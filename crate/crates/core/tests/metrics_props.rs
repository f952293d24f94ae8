//! Invariants of the corpus metrics.

use kgtext::metrics::{bleu4, chrf_pp, cider, cider_per_example, rouge_l, sentence_bleu};
use proptest::prelude::*;

const POOL: [&str; 24] = [
    "river", "stone", "north", "lake", "city", "was", "born", "in", "the", "a", "of", "and", "capital", "tower", "old", "red", "park", "bridge",
    "king", "queen", "music", "film", "paris", "rome",
];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&POOL[..]), 4..12).prop_map(|w| w.join(" "))
}

fn corpus() -> impl Strategy<Value = (Vec<String>, Vec<Vec<String>>)> {
    prop::collection::vec((sentence(), prop::collection::vec(sentence(), 1..3)), 2..7).prop_map(|rows| rows.into_iter().unzip())
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn scores_ignore_example_order((hyps, refs) in corpus(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..hyps.len()).collect();
        idx.sort_by_key(|&i| (seed.rotate_left(i as u32 * 7) ^ i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let h2: Vec<String> = idx.iter().map(|&i| hyps[i].clone()).collect();
        let r2: Vec<Vec<String>> = idx.iter().map(|&i| refs[i].clone()).collect();
        prop_assert_eq!(bleu4(&hyps, &refs), bleu4(&h2, &r2));
        prop_assert_eq!(chrf_pp(&hyps, &refs), chrf_pp(&h2, &r2));
        prop_assert!(close(rouge_l(&hyps, &refs), rouge_l(&h2, &r2)));
        prop_assert!(close(cider(&hyps, &refs), cider(&h2, &r2)));
    }

    #[test]
    fn scores_stay_in_range((hyps, refs) in corpus()) {
        for s in [bleu4(&hyps, &refs), chrf_pp(&hyps, &refs), rouge_l(&hyps, &refs)] {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&s), "{s}");
        }
        prop_assert!(cider(&hyps, &refs) >= 0.0);
    }

    #[test]
    fn reference_copies_score_perfectly(refs in prop::collection::vec(sentence(), 1..5)) {
        let r: Vec<Vec<String>> = refs.iter().map(|s| vec![s.clone()]).collect();
        prop_assert!(close(bleu4(&refs, &r), 100.0));
        prop_assert!(close(chrf_pp(&refs, &r), 100.0));
        prop_assert!(close(rouge_l(&refs, &r), 100.0));
    }

    /// Replacing one matching word by an out-of-vocabulary word strictly lowers every score.
    #[test]
    fn oov_replacement_strictly_lowers((_, refs) in corpus(), pick in any::<prop::sample::Index>(), which in any::<prop::sample::Index>()) {
        let refs: Vec<Vec<String>> = refs.into_iter().map(|r| vec![r[0].clone()]).collect();
        let distinct: std::collections::HashSet<&String> = refs.iter().map(|r| &r[0]).collect();
        prop_assume!(distinct.len() == refs.len());
        let hyps: Vec<String> = refs.iter().map(|r| r[0].clone()).collect();
        let k = which.index(hyps.len());
        let mut words: Vec<&str> = hyps[k].split(' ').collect();
        let j = pick.index(words.len());
        words[j] = "qqzzx";
        let mut worse = hyps.clone();
        worse[k] = words.join(" ");
        prop_assert!(bleu4(&worse, &refs) < bleu4(&hyps, &refs));
        prop_assert!(chrf_pp(&worse, &refs) < chrf_pp(&hyps, &refs));
        prop_assert!(rouge_l(&worse, &refs) < rouge_l(&hyps, &refs));
        prop_assert!(sentence_bleu(&worse[k], &refs[k]) < sentence_bleu(&hyps[k], &refs[k]));
        let (a, b) = (cider_per_example(&worse, &refs), cider_per_example(&hyps, &refs));
        prop_assert!(a[k] < b[k], "cider {} vs {}", a[k], b[k]);
    }
}

#[test]
fn empty_hypothesis_scores_zero() {
    let refs = vec![vec!["the old tower in rome".to_string()]];
    let hyps = vec![String::new()];
    assert_eq!(bleu4(&hyps, &refs), 0.0);
    assert_eq!(rouge_l(&hyps, &refs), 0.0);
    assert_eq!(cider(&hyps, &refs), 0.0);
}

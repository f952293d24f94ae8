//! Order and copy-label extraction against brute-force oracles.

mod common;

use std::collections::HashMap;

use kgtext::kg_data::{linearize, pad_graph, KnowledgeGraph, Triplet};
use kgtext::supervision::{build_vocab, extract_gt_order, generate_copy_labels, tag_pos, LexiconTagger, OrderLabel};
use kgtext::text::{detokenize, tokenize};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn two_hundred_random_pairs_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let (kg, reference) = common::random_pair(&mut rng, 4);
        let order = extract_gt_order(&kg, &reference, 8);
        assert_eq!(order.listing(), common::order_oracle(&kg, &reference), "order for {reference:?}");
        let labels = generate_copy_labels(&kg, &reference);
        assert_eq!(labels.labels, common::label_oracle(&kg, &reference), "labels for {reference:?}");
    }
}

#[test]
fn awh_order_and_labels() {
    let reference = tokenize(common::AWH_TEXT);
    let order = extract_gt_order(&common::awh_graph(), &reference, 8);
    assert_eq!(order.to_string(), "2,0,1");
    assert_eq!(order.real_ranks(), vec![1, 2, 0]);
    assert_eq!(generate_copy_labels(&common::awh_graph(), &reference).labels, [1, 1, 1, 0, 1, 0, 1, 0, 0, 0, 1, 0]);
}

#[test]
fn new_york_twice() {
    let kg = KnowledgeGraph::new("ny", vec![Triplet::new("New York", "state", "USA").unwrap()]).unwrap();
    let reference = tokenize("from New York New York to here");
    assert_eq!(generate_copy_labels(&kg, &reference).labels, [0, 1, 1, 1, 1, 0, 0]);
}

#[test]
fn lexicon_tagger_golden() {
    let tags = tag_pos(&tokenize("AWH was established"), &LexiconTagger, None);
    assert_eq!(tags.names(), ["NOUN", "VERB", "VERB"]);
    let sentences = [
        common::AWH_TEXT,
        "The river flows quickly through an old city .",
        "She was born in 1990 and worked as a teacher .",
        "It is located in Italy , and it has 3 bridges !",
    ];
    let tagged: Vec<(String, Vec<String>)> =
        sentences.iter().map(|s| (s.to_string(), tag_pos(&tokenize(s), &LexiconTagger, None).names())).collect();
    common::golden("lexicon_tags", &tagged);
}

#[test]
fn vocab_cap_keeps_most_frequent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let corpus: Vec<Vec<String>> = (0..10).map(|_| (0..100).map(|_| format!("w{}", rng.gen_range(0..200))).collect()).collect();
    let vocab = build_vocab(&corpus, 1, 50).unwrap();
    assert_eq!(vocab.len(), 50);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in corpus.iter().flatten() {
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let kept = 50 - kgtext::supervision::SPECIALS.len();
    for (t, _) in &ranked[..kept] {
        assert!(vocab.contains(t), "{t} missing");
    }
    for (t, _) in &ranked[kept..] {
        assert!(!vocab.contains(t), "{t} kept");
    }
}

fn arb_pair() -> impl Strategy<Value = (KnowledgeGraph, Vec<String>)> {
    any::<u64>().prop_map(|seed| common::random_pair(&mut ChaCha8Rng::seed_from_u64(seed), 5))
}

proptest! {
    #[test]
    fn order_is_a_permutation((kg, reference) in arb_pair()) {
        let order = extract_gt_order(&kg, &reference, 8);
        let mut listing = order.listing();
        listing.sort_unstable();
        prop_assert_eq!(listing, (0..kg.len()).collect::<Vec<_>>());
        prop_assert!(OrderLabel::new(order.ranks().to_vec()).is_ok());
    }

    #[test]
    fn labelled_tokens_come_from_entities((kg, reference) in arb_pair()) {
        let c = generate_copy_labels(&kg, &reference);
        prop_assert_eq!(c.labels.len(), reference.len());
        let words: Vec<String> = kg.triplets.iter().flat_map(|t| tokenize(&t.head).into_iter().chain(tokenize(&t.tail))).collect();
        for (i, &l) in c.labels.iter().enumerate() {
            if l == 1 {
                prop_assert!(words.contains(&reference[i]));
                prop_assert!(c.spans.iter().any(|s| s.start <= i && i < s.end));
            }
        }
    }

    #[test]
    fn adding_a_triplet_never_removes_labels((kg, reference) in arb_pair(), seed in any::<u64>()) {
        let (extra, _) = common::random_pair(&mut ChaCha8Rng::seed_from_u64(seed), 1);
        let mut bigger = kg.triplets.clone();
        bigger.extend(extra.triplets);
        let bigger = KnowledgeGraph::new("b", bigger).unwrap();
        let a = generate_copy_labels(&kg, &reference).labels;
        let b = generate_copy_labels(&bigger, &reference).labels;
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
    }

    #[test]
    fn labels_survive_detokenize_round_trip((kg, reference) in arb_pair()) {
        let again = tokenize(&detokenize(&reference));
        prop_assert_eq!(&again, &reference);
        prop_assert_eq!(generate_copy_labels(&kg, &again).labels, generate_copy_labels(&kg, &reference).labels);
    }

    #[test]
    fn linearize_round_trips((kg, _) in arb_pair(), seed in any::<u64>()) {
        let mut listing: Vec<usize> = (0..kg.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut listing[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let order = OrderLabel::from_listing(&listing, 8).unwrap();
        let vocab = build_vocab(&[vec!["alpha".into()]], 1, 100).unwrap();
        let lin = linearize(&kg, &order, &vocab).unwrap();
        let segs = lin.segments();
        prop_assert_eq!(segs.len(), kg.len());
        for ((slot, parts), &want) in segs.iter().zip(&listing) {
            prop_assert_eq!(*slot, want);
            let t = &kg.triplets[want];
            prop_assert_eq!(&parts[0], &tokenize(&t.head).join(" "));
            prop_assert_eq!(&parts[1], &tokenize(&t.relation).join(" "));
            prop_assert_eq!(&parts[2], &tokenize(&t.tail).join(" "));
        }
        let padded = pad_graph(&kg, 8).unwrap();
        prop_assert_eq!(padded.real(), &kg.triplets[..]);
        prop_assert_eq!(padded.mask.iter().filter(|&&m| m).count(), kg.len());
    }
}

#![allow(dead_code)]

pub mod gradcheck;
pub mod metric_cases;

use std::collections::HashMap;

use kgtext::corpus::{self, DataConfig};
use kgtext::kg_data::{Example, KnowledgeGraph, Triplet};
use kgtext::model::{Ablation, ArchConfig, Model, Prepared};
use kgtext::supervision::{LexiconTagger, SupervisionRecord};
use kgtext::text::tokenize;
use rand::seq::SliceRandom;
use rand::Rng;

pub const AWH_TEXT: &str = "AWH Engineering College in Kuttikkattoor , India was established in 2001 .";

/// The three-triplet graph in input order COUNTRY, ESTABLISHED, CITY.
pub fn awh_graph() -> KnowledgeGraph {
    KnowledgeGraph::new(
        "awh",
        vec![
            Triplet::new("AWH Engineering College", "COUNTRY", "India").unwrap(),
            Triplet::new("AWH Engineering College", "ESTABLISHED", "2001").unwrap(),
            Triplet::new("AWH Engineering College", "CITY", "Kuttikkattoor").unwrap(),
        ],
    )
    .unwrap()
}

pub fn awh_example() -> Example {
    Example::new("awh", awh_graph(), AWH_TEXT, None).unwrap()
}

pub const WORDS: [&str; 12] = ["alpha", "beta", "gamma", "delta", "omega", "new", "york", "river", "stone", "north", "lake", "city"];
const FILLER: [&str; 8] = ["the", "is", "in", "and", "of", "was", ",", "near"];

/// A random graph over a small word pool (so mentions repeat and overlap)
/// and a reference mixing entity mentions with filler.
pub fn random_pair<R: Rng>(rng: &mut R, max_triplets: usize) -> (KnowledgeGraph, Vec<String>) {
    let entity = |rng: &mut R| -> String {
        let n = rng.gen_range(1..=2);
        (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
    };
    let n = rng.gen_range(1..=max_triplets);
    let triplets: Vec<Triplet> = (0..n).map(|_| Triplet::new(&entity(rng), "rel", &entity(rng)).unwrap()).collect();
    let len = rng.gen_range(0..14);
    let mut reference = Vec::new();
    while reference.len() < len {
        match rng.gen_range(0..3) {
            0 => reference.push(FILLER.choose(rng).unwrap().to_string()),
            1 => reference.push(WORDS.choose(rng).unwrap().to_string()),
            _ => {
                let t = triplets.choose(rng).unwrap();
                let e = if rng.gen_bool(0.5) { &t.head } else { &t.tail };
                reference.extend(e.split(' ').map(str::to_string));
            }
        }
    }
    (KnowledgeGraph::new("rand", triplets).unwrap(), reference)
}

pub fn supervise(examples: &[Example], n: usize) -> Vec<SupervisionRecord> {
    corpus::supervise_all(examples, n, &LexiconTagger)
}

/// A model and its prepared data for `examples`.
pub fn model_for(examples: &[Example], arch: ArchConfig, ablation: Ablation, seed: u64) -> (Model, Vec<Prepared>) {
    let sups = supervise(examples, arch.sorter.capacity);
    let vocab = corpus::vocab_from(&sups, &DataConfig::default()).unwrap();
    let m = Model::new(arch, ablation, vocab, seed).unwrap();
    let data = corpus::prepare_all(examples, &sups, &m).unwrap();
    (m, data)
}

/// d=4, one layer: small enough for finite differences over the whole model.
pub fn nano_arch() -> ArchConfig {
    let mut a = ArchConfig::micro();
    a.model.d_model = 4;
    a.model.n_heads = 2;
    a.model.d_ff = 8;
    a.model.n_layers = 1;
    a.model.rel_window = 4;
    a.sorter.capacity = 4;
    a.sorter.embed_dim = 3;
    a.sorter.hidden = 6;
    a.sorter.entity_buckets = 64;
    a.sorter.relation_buckets = 16;
    a
}

/// Compares `value` with `tests/golden/<name>.json`; `KGTEXT_BLESS=1` rewrites the file.
pub fn golden<T: serde::Serialize>(name: &str, value: &T) {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"));
    let text = serde_json::to_string_pretty(value).unwrap() + "\n";
    if std::env::var_os("KGTEXT_BLESS").is_some() {
        std::fs::write(&path, &text).unwrap();
        return;
    }
    let want = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e} (run with KGTEXT_BLESS=1 to create)", path.display()));
    assert!(want == text, "{} differs from the golden file:\n{text}", path.display());
}

/// Scans the reference left to right. An entity is seen at the first index
/// where its tokens start; a triplet is described once every one of its
/// mentioned entities has been seen.
pub fn order_oracle(kg: &KnowledgeGraph, reference: &[String]) -> Vec<usize> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    for i in 0..reference.len() {
        for t in &kg.triplets {
            for e in [&t.head, &t.tail] {
                let toks = tokenize(e);
                if !seen.contains_key(e) && reference.len() >= i + toks.len() && reference[i..i + toks.len()] == toks[..] {
                    seen.insert(e.clone(), i);
                }
            }
        }
    }
    let key = |t: &Triplet| -> Option<usize> {
        match (seen.get(&t.head), seen.get(&t.tail)) {
            (Some(&a), Some(&b)) => Some(a.max(b)),
            (a, b) => a.or(b).copied(),
        }
    };
    let mut described: Vec<(usize, usize)> = Vec::new();
    let mut silent: Vec<usize> = Vec::new();
    for (i, t) in kg.triplets.iter().enumerate() {
        match key(t) {
            Some(k) => described.push((k, i)),
            None => silent.push(i),
        }
    }
    described.sort();
    described.into_iter().map(|(_, i)| i).chain(silent).collect()
}

/// Every (start, end) sub-range equal to some head or tail is labelled 1.
pub fn label_oracle(kg: &KnowledgeGraph, reference: &[String]) -> Vec<u8> {
    let entities: Vec<Vec<String>> = kg.triplets.iter().flat_map(|t| [tokenize(&t.head), tokenize(&t.tail)]).collect();
    let mut labels = vec![0u8; reference.len()];
    for start in 0..reference.len() {
        for end in start + 1..=reference.len() {
            if entities.iter().any(|e| e[..] == reference[start..end]) {
                labels[start..end].fill(1);
            }
        }
    }
    labels
}

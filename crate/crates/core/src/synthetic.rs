//! Seeded synthetic corpora for fixtures, sweeps and smoke runs.
//!
//! Each graph is a star: one subject with several relations to distinct
//! objects. The reference describes the subject once and then one clause
//! per triplet. Every entity name is a fresh pseudo-word, so with a vocabulary
//! minimum count above one they are out of vocabulary and can only be
//! produced by copying.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kg_data::{CanonicalRecord, Example, KnowledgeGraph, Triplet};

/// Relation surface, clause phrase. Listed in the canonical description priority.
pub const RELATIONS: [(&str, &str); 10] = [
    ("birth place", "was born in"),
    ("occupation", "worked as"),
    ("country", "is located in"),
    ("founded", "was founded by"),
    ("leader", "is led by"),
    ("capital", "has the capital"),
    ("language", "speaks"),
    ("genre", "plays"),
    ("owner", "is owned by"),
    ("award", "received"),
];

const ONSETS: [&str; 14] = ["k", "t", "m", "v", "l", "r", "s", "p", "d", "n", "b", "z", "g", "f"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub examples: usize,
    pub min_triplets: usize,
    pub max_triplets: usize,
    /// Probability that a reference uses a random clause order instead of
    /// the relation priority order.
    pub order_noise: f64,
    /// Probability that an entity name has two words.
    pub two_word_prob: f64,
    /// Number of relations drawn from [`RELATIONS`].
    pub relations: usize,
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            examples: 300,
            min_triplets: 1,
            max_triplets: 4,
            order_noise: 0.5,
            two_word_prob: 0.2,
            relations: RELATIONS.len(),
            seed: 0,
            id_prefix: "syn".into(),
        }
    }
}

impl SynthConfig {
    /// The 50-graph sorting fixture: order is fully determined by relations.
    pub fn sorting_fixture(seed: u64) -> Self {
        Self { examples: 50, min_triplets: 2, max_triplets: 6, order_noise: 0.0, two_word_prob: 0.0, seed, id_prefix: "sort".into(), ..Self::default() }
    }

    /// The 30-example generation fixture.
    pub fn generation_fixture(seed: u64) -> Self {
        Self { examples: 30, min_triplets: 1, max_triplets: 3, order_noise: 0.5, two_word_prob: 0.0, relations: 6, seed, id_prefix: "gen".into() }
    }

    /// The 300-example corpus with planted copyable entities.
    pub fn ablation_corpus(seed: u64) -> Self {
        Self { examples: 300, min_triplets: 2, max_triplets: 4, order_noise: 0.5, two_word_prob: 0.0, relations: 6, seed, id_prefix: "abl".into() }
    }
}

struct Names {
    used: HashSet<String>,
}

impl Names {
    fn word<R: Rng>(&mut self, rng: &mut R) -> String {
        loop {
            let syllables = rng.gen_range(2..=3);
            let w: String = (0..syllables).map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap())).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn name<R: Rng>(&mut self, rng: &mut R, two_word_prob: f64) -> String {
        let first = self.word(rng);
        if rng.gen_bool(two_word_prob) {
            format!("{first} {}", self.word(rng))
        } else {
            first
        }
    }
}

/// One synthetic record; `triples` are in input order, `text` follows the description order.
pub fn generate_records(cfg: &SynthConfig) -> Vec<CanonicalRecord> {
    assert!(cfg.min_triplets >= 1 && cfg.min_triplets <= cfg.max_triplets, "triplet range must be non-empty");
    let relations = cfg.relations.clamp(1, RELATIONS.len());
    assert!(cfg.max_triplets <= relations, "each graph uses distinct relations");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut names = Names { used: HashSet::new() };
    let mut out = Vec::with_capacity(cfg.examples);
    for i in 0..cfg.examples {
        let n = rng.gen_range(cfg.min_triplets..=cfg.max_triplets);
        let mut rels: Vec<usize> = (0..relations).collect();
        rels.shuffle(&mut rng);
        rels.truncate(n);
        let subject = names.name(&mut rng, cfg.two_word_prob);
        let objects: Vec<String> = (0..n).map(|_| names.name(&mut rng, cfg.two_word_prob)).collect();
        // `rels` is already a random input order; the description order is
        // either priority order or another shuffle.
        let mut described: Vec<usize> = (0..n).collect();
        if rng.gen_bool(cfg.order_noise) {
            described.shuffle(&mut rng);
        } else {
            described.sort_by_key(|&k| rels[k]);
        }
        let clauses: Vec<String> = described.iter().map(|&k| format!("{} {}", RELATIONS[rels[k]].1, objects[k])).collect();
        let text = format!("{subject} {} .", clauses.join(" and "));
        let triples = (0..n).map(|k| vec![subject.clone(), RELATIONS[rels[k]].0.to_string(), objects[k].clone()]).collect();
        out.push(CanonicalRecord { id: Some(format!("{}-{i:04}", cfg.id_prefix)), triples, text: Some(text), texts: Vec::new(), pos: None });
    }
    out
}

pub fn generate_examples(cfg: &SynthConfig) -> Result<Vec<Example>> {
    generate_records(cfg)
        .into_iter()
        .map(|r| {
            let id = r.id.expect("synthetic records carry ids");
            let triplets = r.triples.iter().map(|t| Triplet::new(&t[0], &t[1], &t[2])).collect::<Result<Vec<_>>>()?;
            Example::new(id.clone(), KnowledgeGraph::new(id, triplets)?, r.text.as_deref().unwrap_or_default(), None)
        })
        .collect()
}

pub fn to_jsonl(records: &[CanonicalRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialise") + "\n").collect()
}

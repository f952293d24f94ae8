use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::fnv1a;

pub const HEAD_MARKER: &str = "<Head>";
pub const RELATION_MARKER: &str = "<Relation>";
pub const TAIL_MARKER: &str = "<Tail>";

/// Special tokens, in id order.
pub const SPECIALS: [&str; 8] = ["<pad>", "<bos>", "<eos>", "<unk>", HEAD_MARKER, RELATION_MARKER, TAIL_MARKER, crate::kg_data::PLACEHOLDER];

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const PLACEHOLDER_ID: usize = 7;

const DEFAULT_OOV_BUCKETS: usize = 64;

/// Token/id lookup shared by the encoder input and the decoder output.
///
/// Ids `0..len()` are real vocabulary entries. Model *inputs* additionally
/// use `len()..input_size()` for hashed buckets of out-of-vocabulary words,
/// so unseen entity names stay distinguishable in the source sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    oov_buckets: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    oov_buckets: usize,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        Vocabulary::from_tokens(r.tokens, r.oov_buckets)
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr { tokens: v.tokens, oov_buckets: v.oov_buckets }
    }
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, oov_buckets: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index, oov_buckets }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Size of the input embedding table (vocabulary plus OOV buckets).
    pub fn input_size(&self) -> usize {
        self.tokens.len() + self.oov_buckets
    }

    pub fn oov_buckets(&self) -> usize {
        self.oov_buckets
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Output id: the token's id, or `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Input id: the token's id, or its hashed OOV bucket.
    pub fn input_id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&i) => i,
            None if self.oov_buckets > 0 => self.tokens.len() + (fnv1a(token) % self.oov_buckets as u64) as usize,
            None => UNK,
        }
    }

    pub fn marker_id(&self, marker: &str) -> usize {
        *self.index.get(marker).unwrap_or_else(|| panic!("vocabulary lacks special token {marker}"))
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn is_special(&self, id: usize) -> bool {
        id < SPECIALS.len()
    }
}

/// Builds a vocabulary: specials first, then tokens by descending frequency
/// with lexicographic tie-break, keeping those seen at least `min_count`
/// times, capped at `max_size` entries in total.
pub fn build_vocab(corpus: &[Vec<String>], min_count: usize, max_size: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_size < SPECIALS.len() {
        return Err(Error::VocabTooSmall { max: max_size, specials: SPECIALS.len() });
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in corpus {
        for t in seq {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count.max(1) && !SPECIALS.contains(&t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    tokens.extend(ranked.into_iter().take(max_size - SPECIALS.len()).map(|(t, _)| t.to_string()));
    Ok(Vocabulary::from_tokens(tokens, DEFAULT_OOV_BUCKETS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn frequency_orders_ids() {
        let v = build_vocab(&[toks("a a b")], 1, 100).unwrap();
        assert!(v.contains("a") && v.contains("b"));
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.len(), SPECIALS.len() + 2);
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.id(s), i);
        }
    }

    #[test]
    fn min_count_excludes_rare_tokens() {
        let v = build_vocab(&[toks("a a b")], 2, 100).unwrap();
        assert!(!v.contains("b"));
        assert_eq!(v.id("b"), UNK);
        assert!(v.input_id("b") >= v.len());
    }

    #[test]
    fn errors() {
        assert!(matches!(build_vocab(&[toks("a")], 1, 3), Err(Error::VocabTooSmall { .. })));
        assert!(matches!(build_vocab(&[], 1, 30), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn max_size_keeps_most_frequent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Zipf-ish: token k drawn with weight 1/(k+1).
        let weights: Vec<f64> = (0..200).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let total: f64 = weights.iter().sum();
        let seq: Vec<String> = (0..1000)
            .map(|_| {
                let mut u = rng.gen_range(0.0..total);
                let mut k = 0;
                while u >= weights[k] {
                    u -= weights[k];
                    k += 1;
                }
                format!("w{k}")
            })
            .collect();
        let v = build_vocab(std::slice::from_ref(&seq), 1, 50).unwrap();
        assert_eq!(v.len(), 50);
        // Oracle: plain frequency count, sorted the same way.
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &seq {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        for (t, _) in ranked.iter().take(50 - SPECIALS.len()) {
            assert!(v.contains(t), "missing frequent token {t}");
        }
    }

    #[test]
    fn serde_round_trip_rebuilds_index() {
        let v = build_vocab(&[toks("x y y")], 1, 100).unwrap();
        let back: Vocabulary = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.id("y"), v.id("y"));
    }
}

//! From parsed examples to model-ready training data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg_data::{enforce_size, Example, OversizePolicy};
use crate::model::{self, Model, Prepared};
use crate::supervision::{build_vocab, supervise, PosTagger, SupervisionRecord, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Fixed order length N.
    pub order_length: usize,
    pub min_count: usize,
    pub max_vocab: usize,
    pub tagger: String,
    pub oversize: OversizePolicy,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { order_length: 8, min_count: 1, max_vocab: 20_000, tagger: "lexicon".into(), oversize: OversizePolicy::Reject }
    }
}

/// Applies the oversize policy to every graph.
pub fn fit_graphs(examples: Vec<Example>, cfg: &DataConfig) -> Result<Vec<Example>> {
    examples
        .into_iter()
        .map(|mut e| {
            e.graph = enforce_size(&e.graph, cfg.order_length, cfg.oversize)?;
            Ok(e)
        })
        .collect()
}

pub fn supervise_all(examples: &[Example], order_length: usize, tagger: &dyn PosTagger) -> Vec<SupervisionRecord> {
    examples.iter().map(|e| supervise(e, order_length, tagger)).collect()
}

/// Output vocabulary from reference tokens only; graph-only words reach the
/// encoder through hashed input buckets.
pub fn vocab_from(sups: &[SupervisionRecord], cfg: &DataConfig) -> Result<Vocabulary> {
    let corpus: Vec<Vec<String>> = sups.iter().map(|s| s.tokens.clone()).collect();
    build_vocab(&corpus, cfg.min_count, cfg.max_vocab)
}

pub fn prepare_all(examples: &[Example], sups: &[SupervisionRecord], m: &Model) -> Result<Vec<Prepared>> {
    if examples.len() != sups.len() {
        return Err(Error::LengthMismatch(format!("{} examples but {} supervision records", examples.len(), sups.len())));
    }
    examples.iter().zip(sups).map(|(e, s)| model::prepare(e, s, m)).collect()
}

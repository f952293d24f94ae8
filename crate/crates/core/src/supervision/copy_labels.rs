use serde::{Deserialize, Serialize};

use crate::kg_data::KnowledgeGraph;
use crate::text::tokenize;

/// A matched entity mention: reference tokens `start..end` name an entity of `triplet`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionSpan {
    pub start: usize,
    pub end: usize,
    pub triplet: usize,
}

/// Per-token 0/1 copy supervision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyLabelSequence {
    pub labels: Vec<u8>,
    /// Every entity match, ordered by start then length.
    pub spans: Vec<MentionSpan>,
    /// Triplet owning each token, resolved longest match first, then leftmost.
    pub token_triplet: Vec<Option<usize>>,
}

impl CopyLabelSequence {
    pub fn copy_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Start offsets of every occurrence of `needle` in `haystack` (token level).
pub fn find_mentions(needle: &[String], haystack: &[String]) -> Vec<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return Vec::new();
    }
    haystack.windows(needle.len()).enumerate().filter(|(_, w)| *w == needle).map(|(i, _)| i).collect()
}

/// Labels every reference token covered by a head or tail mention with 1.
///
/// Relations never contribute. Matching is exact on lowercased tokens.
pub fn generate_copy_labels(kg: &KnowledgeGraph, reference: &[String]) -> CopyLabelSequence {
    // Entity surface -> lowest triplet index holding it.
    let mut entities: Vec<(Vec<String>, usize)> = Vec::new();
    for (i, t) in kg.triplets.iter().enumerate() {
        for surface in [&t.head, &t.tail] {
            let toks = tokenize(surface);
            if !entities.iter().any(|(e, _)| *e == toks) {
                entities.push((toks, i));
            }
        }
    }
    let mut spans: Vec<MentionSpan> = entities
        .iter()
        .flat_map(|(toks, triplet)| {
            find_mentions(toks, reference).into_iter().map(move |start| MentionSpan { start, end: start + toks.len(), triplet: *triplet })
        })
        .collect();
    spans.sort_by_key(|s| (s.start, s.end, s.triplet));
    spans.dedup_by_key(|s| (s.start, s.end));

    let mut labels = vec![0u8; reference.len()];
    for s in &spans {
        labels[s.start..s.end].fill(1);
    }
    let mut by_priority = spans.clone();
    by_priority.sort_by_key(|s| (std::cmp::Reverse(s.end - s.start), s.start));
    let mut token_triplet = vec![None; reference.len()];
    for s in by_priority {
        for slot in &mut token_triplet[s.start..s.end] {
            slot.get_or_insert(s.triplet);
        }
    }
    CopyLabelSequence { labels, spans, token_triplet }
}
